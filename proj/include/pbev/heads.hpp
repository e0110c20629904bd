#pragma once

#include <array>
#include <utility>
#include <vector>

#include "pbev/autodiff.hpp"
#include "pbev/bev_transform.hpp"
#include "pbev/geometry.hpp"

namespace pbev::heads {

// ---- task domain types ----

struct Cuboid {
    double r = 0, a = 0, e = 0;     // polar position, center elevation (meters)
    double dx = 1, dy = 1, dz = 1;  // dimensions (meters)
    geom::RotationMatrix rot;

    double yaw() const { return std::atan2(rot.at(1, 0), rot.at(0, 0)); }
    void xy(double& x, double& y) const {
        x = r * std::cos(a);
        y = r * std::sin(a);
    }
};

struct GtObstacle {
    int cls = 0;
    Cuboid cuboid;
};

struct ObstaclePrediction {
    int cell = 0;
    double objectness = 0;
    std::vector<double> class_probs;  // k entries, sums to 1
    Cuboid cuboid;
    double sigma_r = 0.5, sigma_a = 0.5, sigma_e = 0.5, sigma_s = 0.5, sigma_o = 0.5;
};

enum FreespaceClass { kFsVehicle = 0, kFsVru = 1, kFsOther = 2 };
inline constexpr int kFreespaceClasses = 3;

// RDM ray directions are 2*pi*i/n_bins (bin 0 looks straight down +x).
struct RadialDistanceMap {
    int n_bins = 0;
    std::vector<double> radius;
    std::vector<int> cls;
    std::vector<std::array<double, kFreespaceClasses>> probs;  // empty for GT maps

    static double direction(int i, int n_bins) { return 2.0 * M_PI * i / n_bins; }
};

enum ParkingProfile { kAngled = 0, kParallel = 1, kPerpendicular = 2 };
inline constexpr int kParkingProfiles = 3;

struct ParkingSpace {
    double cx = 0, cy = 0;       // meters, rig frame
    double l = 1, w = 1;         // length/width, meters
    double theta = 0;            // [0, pi)
    int profile = kAngled;
    std::array<double, kParkingProfiles> profile_conf{0, 0, 0};

    double existence() const {
        return std::max({profile_conf[0], profile_conf[1], profile_conf[2]});
    }
};

struct MatchAssignment {
    std::vector<std::pair<int, int>> pairs;  // (gt index, cell), one-to-one
    std::vector<int> negatives;              // cells without a match
    int unmatched_gts = 0;
};

// Simple polygon with per-edge class labels (edge i joins vertex i to i+1,
// circularly). Must contain the origin for RDM extraction.
struct FreespacePolygon {
    std::vector<std::array<double, 2>> verts;
    std::vector<int> edge_cls;
};

// ---- head output bundles (graph nodes over the BEV feature map) ----

struct ObstacleHeadOut {
    int k = 0;           // class count
    ad::NodePtr cls;     // (1+k, M, N): objectness logit + class logits
    ad::NodePtr pos;     // (3, M, N): radial / angular offset logits, elevation
    ad::NodePtr dim;     // (3, M, N): dimension logits (softplus + 0.01)
    ad::NodePtr rot;     // (6, M, N): sin/cos of yaw, pitch, roll
    ad::NodePtr unc;     // (5, M, N): log sigma r, a, e, s, o
};

struct FreespaceHeadOut {
    ad::NodePtr out;  // (1 + kFreespaceClasses, M): radius logit + class logits
};

struct ParkingHeadOut {
    ad::NodePtr conf;  // (kParkingProfiles, M, N)
    ad::NodePtr reg;   // (6, M, N): dr, da, l, w, sin 2theta, cos 2theta
};

struct LossConfig {
    double gamma = 2.0;         // focal exponent
    double lambda_cls = 1.0;    // matching cost weights
    double lambda_pos = 5.0;
    double lambda_size = 1.0;
    double lambda_rot = 1.0;
};

// ---- decoding ----

std::vector<ObstaclePrediction> decode_obstacles(const Tensor& cls, const Tensor& pos,
                                                 const Tensor& dim, const Tensor& rot,
                                                 const Tensor& unc,
                                                 const bev::PolarGridSpec& grid);

RadialDistanceMap decode_rdm(const Tensor& out, double r_max);

std::vector<ParkingSpace> decode_parking(const Tensor& conf, const Tensor& reg,
                                         const bev::PolarGridSpec& grid);

// Offset squashers shared by decode and the in-graph loss path.
inline double offset_radius(const bev::PolarGridSpec& g, int n, double logit) {
    return g.center_radius(n) + std::tanh(logit) * g.radial_span(n);
}
inline double offset_azimuth(const bev::PolarGridSpec& g, int m, double logit) {
    return geom::wrap_angle_2pi(g.center_azimuth(m) + std::tanh(logit) * g.angular_width());
}
inline double squash_radius(double logit, double r_max) {
    return r_max * std::tanh(std::log1p(std::exp(std::min(logit, 30.0))));
}

// ---- matching ----

// Cells whose centers fall inside the oriented footprint rectangle, dilated
// by one cell ring; always contains the cell of (cx, cy) when on-grid.
std::vector<int> candidate_mask(double cx, double cy, double half_x, double half_y,
                                double yaw, const bev::PolarGridSpec& grid);
std::vector<int> candidate_mask(const Cuboid& gt, const bev::PolarGridSpec& grid);
std::vector<int> candidate_mask(const ParkingSpace& gt, const bev::PolarGridSpec& grid);

double match_cost(const GtObstacle& gt, const ObstaclePrediction& pred,
                  const LossConfig& cfg);
double match_cost(const ParkingSpace& gt, const ParkingSpace& pred, const LossConfig& cfg);

// Admissible (cost, gt, cell) triples -> greedy one-to-one assignment with
// deterministic (cost, gt, cell) ordering. `cells` is the total cell count.
MatchAssignment greedy_assign(std::vector<std::tuple<double, int, int>> admissible,
                              int gt_count, int cells);

MatchAssignment greedy_match(const std::vector<GtObstacle>& gts,
                             const std::vector<ObstaclePrediction>& preds,
                             const std::vector<std::vector<int>>& masks,
                             const LossConfig& cfg, int cells);

// ---- losses (graph-building; fully differentiable incl. uncertainties) ----

struct ObstacleLossResult {
    ad::NodePtr loss;
    MatchAssignment assign;
    int skipped_gts = 0;  // off-grid or empty-mask ground truths
};

ObstacleLossResult obstacle_loss(const ObstacleHeadOut& head,
                                 const std::vector<GtObstacle>& gts,
                                 const bev::PolarGridSpec& grid, const LossConfig& cfg);

ad::NodePtr freespace_loss(const FreespaceHeadOut& head, const RadialDistanceMap& gt,
                           double r_max, const LossConfig& cfg);

struct ParkingLossResult {
    ad::NodePtr loss;
    MatchAssignment assign;
    int skipped_gts = 0;
};

ParkingLossResult parking_loss(const ParkingHeadOut& head,
                               const std::vector<ParkingSpace>& gts,
                               const bev::PolarGridSpec& grid, const LossConfig& cfg);

// ---- geometry helpers ----

// Ground-truth RDM: per angular bin the nearest boundary hit of a ray from
// the origin. Throws std::invalid_argument when the origin is outside.
RadialDistanceMap rdm_from_polygon(const FreespacePolygon& poly, int n_bins, double r_max);

// Intersection-over-union of two oriented rectangles (convex clipping).
double oriented_iou(const ParkingSpace& a, const ParkingSpace& b);

// Wrapped angular distance helpers.
inline double ang_diff_2pi(double a, double b) { return geom::wrap_angle_pi(a - b); }
inline double ang_diff_pi(double a, double b) {
    double d = std::fmod(a - b, M_PI);
    if (d > M_PI / 2) d -= M_PI;
    if (d < -M_PI / 2) d += M_PI;
    return d;
}

}  // namespace pbev::heads
