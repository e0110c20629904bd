#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pbev/heads.hpp"

namespace pbev::metrics {

struct Detection {
    heads::GtObstacle obj;
    double confidence = 0;
};

struct SceneDetections {
    std::vector<heads::GtObstacle> gts;
    std::vector<Detection> dets;
};

// Validity gates for a matched pair: relative radial error strictly below
// rel_radial AND absolute azimuth error strictly below az_deg degrees.
struct MatchGates {
    double rel_radial = 0.10;
    double az_deg = 2.0;
};

// Rectangular safety region around the ego: |x| <= x_half, |y| <= y_half.
struct ZoneSpec {
    double x_half = 100.0;
    double y_half = 10.0;
};

// Angular interval (wrapped, lo -> hi counter-clockwise) and radial range
// applied to ground truth and detections alike.
struct SectorFilter {
    double a_lo = 0, a_hi = 2 * M_PI;
    double r_lo = 0, r_hi = 1e9;

    bool contains(double azimuth, double r) const;
};

struct EvalMatch {
    std::vector<std::pair<int, int>> tp;  // (gt index, det index)
    std::vector<int> fp;                  // unmatched det indices
    std::vector<int> fn;                  // unmatched gt indices
};

// Greedy one-to-one by ascending centroid distance with the validity gates;
// both inputs restricted to one class by the caller.
EvalMatch match_for_eval(const std::vector<heads::GtObstacle>& gts,
                         const std::vector<Detection>& dets, const MatchGates& gates);

struct ClassKpis {
    std::string name;
    int gt_count = 0;
    bool has_gts = false;
    double ap = 0;
    double best_f1 = 0, best_threshold = 0, precision = 0, recall = 0;
    // Regression errors over true positives at the best-F1 threshold.
    double radial_err_pct = 0;
    double azimuth_err_deg = 0;
    double elevation_err_m = 0;
    double orientation_err_deg = 0;
    double shape_err_pct = 0;
};

struct DetectionKpis {
    std::vector<ClassKpis> per_class;
    double map = 0;
    double safety_map = 0;
    int classes_without_gts = 0;
};

DetectionKpis detection_kpis(const std::vector<SceneDetections>& scenes, int class_count,
                             const MatchGates& gates = {}, const ZoneSpec& zone = {},
                             const std::optional<SectorFilter>& sector = std::nullopt,
                             const std::vector<std::string>& class_names = {});

struct FreespaceKpis {
    double relative_gap_pct = 0;
    double absolute_gap_m = 0;
    double success_rate_pct = 0;
    double smoothness_m = 0;  // circular total variation of the prediction
    std::array<double, heads::kFreespaceClasses> precision{};
    std::array<double, heads::kFreespaceClasses> recall{};
    long bins = 0;
};

FreespaceKpis freespace_kpis(const std::vector<heads::RadialDistanceMap>& preds,
                             const std::vector<heads::RadialDistanceMap>& gts,
                             const std::optional<SectorFilter>& sector = std::nullopt);

struct SceneParking {
    std::vector<heads::ParkingSpace> gts;   // profile set, confidences unused
    std::vector<heads::ParkingSpace> dets;  // confidences carry ranking
};

struct ParkingKpis {
    std::array<double, heads::kParkingProfiles> profile_ap{};
    std::array<bool, heads::kParkingProfiles> profile_has_gts{};
    double all_ap = 0;
    double best_f1 = 0;
    double mean_iou = 0;  // over TPs at the best-F1 threshold, pooled
};

ParkingKpis parking_kpis(const std::vector<SceneParking>& scenes, double iou_gate = 0.7);

// Shared AP machinery: (recall, precision) operating points -> 101-point
// interpolated average precision.
double interpolated_ap(const std::vector<std::pair<double, double>>& recall_precision);

}  // namespace pbev::metrics
