#include "pbev/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pbev::metrics {

using heads::GtObstacle;
using heads::ParkingSpace;

bool SectorFilter::contains(double azimuth, double r) const {
    if (r < r_lo || r > r_hi) return false;
    double span = geom::wrap_angle_2pi(a_hi - a_lo);
    if (span == 0.0) span = 2 * M_PI;  // degenerate interval means everything
    double rel = geom::wrap_angle_2pi(azimuth - a_lo);
    return rel <= span;
}

EvalMatch match_for_eval(const std::vector<GtObstacle>& gts,
                         const std::vector<Detection>& dets, const MatchGates& gates) {
    struct Cand {
        double dist;
        int gi, di;
        bool operator<(const Cand& o) const {
            return std::tie(dist, gi, di) < std::tie(o.dist, o.gi, o.di);
        }
    };
    std::vector<Cand> cands;
    const double az_rad = gates.az_deg * M_PI / 180.0;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        double gx, gy;
        gts[gi].cuboid.xy(gx, gy);
        for (size_t di = 0; di < dets.size(); ++di) {
            const auto& d = dets[di].obj.cuboid;
            double rel = std::abs(d.r - gts[gi].cuboid.r) / std::max(gts[gi].cuboid.r, 1.0);
            double az = std::abs(heads::ang_diff_2pi(d.a, gts[gi].cuboid.a));
            if (rel >= gates.rel_radial || az >= az_rad) continue;
            double dx_, dy_;
            d.xy(dx_, dy_);
            cands.push_back({std::hypot(dx_ - gx, dy_ - gy), int(gi), int(di)});
        }
    }
    std::sort(cands.begin(), cands.end());
    EvalMatch out;
    std::vector<char> gt_used(gts.size(), 0), det_used(dets.size(), 0);
    for (const auto& c : cands) {
        if (gt_used[c.gi] || det_used[c.di]) continue;
        gt_used[c.gi] = 1;
        det_used[c.di] = 1;
        out.tp.emplace_back(c.gi, c.di);
    }
    for (size_t di = 0; di < dets.size(); ++di)
        if (!det_used[di]) out.fp.push_back(int(di));
    for (size_t gi = 0; gi < gts.size(); ++gi)
        if (!gt_used[gi]) out.fn.push_back(int(gi));
    return out;
}

double interpolated_ap(const std::vector<std::pair<double, double>>& rp) {
    double total = 0;
    for (int i = 0; i <= 100; ++i) {
        double r = i / 100.0;
        double best = 0;
        for (const auto& [rec, prec] : rp)
            if (rec >= r - 1e-12) best = std::max(best, prec);
        total += best;
    }
    return total / 101.0;
}

namespace {

bool in_zone(const heads::Cuboid& c, const ZoneSpec& z) {
    double x, y;
    c.xy(x, y);
    return std::abs(x) <= z.x_half && std::abs(y) <= z.y_half;
}

struct ClassScenes {
    std::vector<std::vector<GtObstacle>> gts;
    std::vector<std::vector<Detection>> dets;
    std::vector<double> confs;
    int gt_total = 0;
};

ClassScenes split_class(const std::vector<SceneDetections>& scenes, int cls,
                        const ZoneSpec* zone, const std::optional<SectorFilter>& sector) {
    ClassScenes out;
    for (const auto& s : scenes) {
        std::vector<GtObstacle> g;
        std::vector<Detection> d;
        for (const auto& gt : s.gts) {
            if (gt.cls != cls) continue;
            if (zone && !in_zone(gt.cuboid, *zone)) continue;
            if (sector && !sector->contains(gt.cuboid.a, gt.cuboid.r)) continue;
            g.push_back(gt);
        }
        for (const auto& det : s.dets) {
            if (det.obj.cls != cls) continue;
            if (zone && !in_zone(det.obj.cuboid, *zone)) continue;
            if (sector && !sector->contains(det.obj.cuboid.a, det.obj.cuboid.r)) continue;
            d.push_back(det);
            out.confs.push_back(det.confidence);
        }
        out.gt_total += int(g.size());
        out.gts.push_back(std::move(g));
        out.dets.push_back(std::move(d));
    }
    return out;
}

struct Operating {
    double threshold, precision, recall, f1;
    long tp;
};

// One matching pass per candidate threshold (matching is re-run rather than
// carried over, so gates interact with the threshold exactly).
std::vector<Operating> operating_points(const ClassScenes& cs, const MatchGates& gates) {
    std::vector<double> thresholds = cs.confs;
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    std::vector<Operating> out;
    for (double thr : thresholds) {
        long tp = 0, fp = 0, fn = 0;
        for (size_t si = 0; si < cs.gts.size(); ++si) {
            std::vector<Detection> kept;
            for (const auto& d : cs.dets[si])
                if (d.confidence >= thr) kept.push_back(d);
            auto m = match_for_eval(cs.gts[si], kept, gates);
            tp += long(m.tp.size());
            fp += long(m.fp.size());
            fn += long(m.fn.size());
        }
        double prec = (tp + fp) ? double(tp) / double(tp + fp) : 1.0;
        double rec = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
        double f1 = (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
        out.push_back({thr, prec, rec, f1, tp});
    }
    return out;
}

ClassKpis class_kpis(const ClassScenes& cs, const MatchGates& gates) {
    ClassKpis k;
    k.gt_count = cs.gt_total;
    k.has_gts = cs.gt_total > 0;
    auto ops = operating_points(cs, gates);
    if (!k.has_gts) return k;
    std::vector<std::pair<double, double>> rp;
    for (const auto& o : ops) rp.emplace_back(o.recall, o.precision);
    k.ap = rp.empty() ? 0.0 : interpolated_ap(rp);
    const Operating* best = nullptr;
    for (const auto& o : ops)
        if (!best || o.f1 > best->f1) best = &o;
    if (!best) return k;
    k.best_f1 = best->f1;
    k.best_threshold = best->threshold;
    k.precision = best->precision;
    k.recall = best->recall;

    // Regression errors over TPs at the best threshold.
    double rel = 0, az = 0, el = 0, ori = 0, shp = 0;
    long n = 0;
    for (size_t si = 0; si < cs.gts.size(); ++si) {
        std::vector<Detection> kept;
        for (const auto& d : cs.dets[si])
            if (d.confidence >= best->threshold) kept.push_back(d);
        auto m = match_for_eval(cs.gts[si], kept, gates);
        for (auto [gi, di] : m.tp) {
            const auto& g = cs.gts[si][gi].cuboid;
            const auto& d = kept[di].obj.cuboid;
            rel += std::abs(d.r - g.r) / std::max(g.r, 1.0) * 100.0;
            az += std::abs(heads::ang_diff_2pi(d.a, g.a)) * 180.0 / M_PI;
            el += std::abs(d.e - g.e);
            ori += geom::rotation_error(g.rot, d.rot) * 180.0 / M_PI;
            shp += (std::abs(d.dx - g.dx) / g.dx + std::abs(d.dy - g.dy) / g.dy +
                    std::abs(d.dz - g.dz) / g.dz) /
                   3.0 * 100.0;
            ++n;
        }
    }
    if (n > 0) {
        k.radial_err_pct = rel / n;
        k.azimuth_err_deg = az / n;
        k.elevation_err_m = el / n;
        k.orientation_err_deg = ori / n;
        k.shape_err_pct = shp / n;
    }
    return k;
}

}  // namespace

DetectionKpis detection_kpis(const std::vector<SceneDetections>& scenes, int class_count,
                             const MatchGates& gates, const ZoneSpec& zone,
                             const std::optional<SectorFilter>& sector,
                             const std::vector<std::string>& class_names) {
    DetectionKpis out;
    double map_sum = 0, safety_sum = 0;
    int map_n = 0, safety_n = 0;
    for (int c = 0; c < class_count; ++c) {
        auto cs = split_class(scenes, c, nullptr, sector);
        ClassKpis k = class_kpis(cs, gates);
        k.name = c < int(class_names.size()) ? class_names[c] : "class" + std::to_string(c);
        if (k.has_gts) {
            map_sum += k.ap;
            ++map_n;
        } else {
            ++out.classes_without_gts;
        }
        auto zs = split_class(scenes, c, &zone, sector);
        ClassKpis zk = class_kpis(zs, gates);
        if (zk.has_gts) {
            safety_sum += zk.ap;
            ++safety_n;
        }
        out.per_class.push_back(std::move(k));
    }
    out.map = map_n ? map_sum / map_n : 0.0;
    out.safety_map = safety_n ? safety_sum / safety_n : 0.0;
    return out;
}

FreespaceKpis freespace_kpis(const std::vector<heads::RadialDistanceMap>& preds,
                             const std::vector<heads::RadialDistanceMap>& gts,
                             const std::optional<SectorFilter>& sector) {
    FreespaceKpis out;
    double rel = 0, abs_gap = 0;
    long ok = 0, n = 0;
    std::array<long, heads::kFreespaceClasses> cls_tp{}, cls_pred{}, cls_gt{};
    for (size_t si = 0; si < preds.size(); ++si) {
        const auto& p = preds[si];
        const auto& g = gts[si];
        for (int i = 0; i < g.n_bins; ++i) {
            double a = heads::RadialDistanceMap::direction(i, g.n_bins);
            if (sector && !sector->contains(a, g.radius[i])) continue;
            double gap = std::abs(p.radius[i] - g.radius[i]);
            double r = gap / std::max(g.radius[i], 1.0) * 100.0;
            rel += r;
            abs_gap += gap;
            if (r <= 10.0) ++ok;  // boundary counts as success
            ++n;
            ++cls_pred[p.cls[i]];
            ++cls_gt[g.cls[i]];
            if (p.cls[i] == g.cls[i]) ++cls_tp[p.cls[i]];
        }
        // Smoothness over the full circular map (not sector-filtered).
        if (!sector)
            for (int i = 0; i < p.n_bins; ++i) {
                int prev = (i + p.n_bins - 1) % p.n_bins;
                out.smoothness_m += std::abs(p.radius[i] - p.radius[prev]);
            }
    }
    out.bins = n;
    if (n > 0) {
        out.relative_gap_pct = rel / n;
        out.absolute_gap_m = abs_gap / n;
        out.success_rate_pct = 100.0 * ok / n;
    }
    if (!preds.empty()) out.smoothness_m /= double(preds.size());
    for (int c = 0; c < heads::kFreespaceClasses; ++c) {
        out.precision[c] = cls_pred[c] ? double(cls_tp[c]) / cls_pred[c] : 0.0;
        out.recall[c] = cls_gt[c] ? double(cls_tp[c]) / cls_gt[c] : 0.0;
    }
    return out;
}

namespace {

struct ParkingMatch {
    long tp = 0, fp = 0, fn = 0;
    double iou_sum = 0;
};

// Greedy by descending IoU with the gate.
ParkingMatch match_parking(const std::vector<ParkingSpace>& gts,
                           const std::vector<const ParkingSpace*>& dets, double gate) {
    struct Cand {
        double iou;
        int gi, di;
    };
    std::vector<Cand> cands;
    for (size_t gi = 0; gi < gts.size(); ++gi)
        for (size_t di = 0; di < dets.size(); ++di) {
            double iou = heads::oriented_iou(gts[gi], *dets[di]);
            if (iou >= gate) cands.push_back({iou, int(gi), int(di)});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return std::tie(b.iou, a.gi, a.di) < std::tie(a.iou, b.gi, b.di);
    });
    ParkingMatch out;
    std::vector<char> gu(gts.size(), 0), du(dets.size(), 0);
    for (const auto& c : cands) {
        if (gu[c.gi] || du[c.di]) continue;
        gu[c.gi] = 1;
        du[c.di] = 1;
        ++out.tp;
        out.iou_sum += c.iou;
    }
    out.fp = long(dets.size()) - out.tp;
    out.fn = long(gts.size()) - out.tp;
    return out;
}

struct ParkingOperating {
    double threshold, precision, recall, f1, mean_iou;
};

std::vector<ParkingOperating> parking_ops(const std::vector<SceneParking>& scenes,
                                          int profile,  // -1 pools all profiles
                                          double gate) {
    std::vector<double> thresholds;
    for (const auto& s : scenes)
        for (const auto& d : s.dets)
            if (profile < 0 || d.profile == profile) thresholds.push_back(d.existence());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    std::vector<ParkingOperating> out;
    for (double thr : thresholds) {
        ParkingMatch total;
        for (const auto& s : scenes) {
            std::vector<ParkingSpace> g;
            for (const auto& gt : s.gts)
                if (profile < 0 || gt.profile == profile) g.push_back(gt);
            std::vector<const ParkingSpace*> d;
            for (const auto& det : s.dets)
                if ((profile < 0 || det.profile == profile) && det.existence() >= thr)
                    d.push_back(&det);
            auto m = match_parking(g, d, gate);
            total.tp += m.tp;
            total.fp += m.fp;
            total.fn += m.fn;
            total.iou_sum += m.iou_sum;
        }
        double prec = (total.tp + total.fp) ? double(total.tp) / (total.tp + total.fp) : 1.0;
        double rec = (total.tp + total.fn) ? double(total.tp) / (total.tp + total.fn) : 0.0;
        double f1 = (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
        out.push_back({thr, prec, rec, f1, total.tp ? total.iou_sum / total.tp : 0.0});
    }
    return out;
}

}  // namespace

ParkingKpis parking_kpis(const std::vector<SceneParking>& scenes, double iou_gate) {
    ParkingKpis out;
    for (int p = 0; p < heads::kParkingProfiles; ++p) {
        long gt_count = 0;
        for (const auto& s : scenes)
            for (const auto& g : s.gts)
                if (g.profile == p) ++gt_count;
        out.profile_has_gts[p] = gt_count > 0;
        if (!gt_count) continue;
        auto ops = parking_ops(scenes, p, iou_gate);
        std::vector<std::pair<double, double>> rp;
        for (const auto& o : ops) rp.emplace_back(o.recall, o.precision);
        out.profile_ap[p] = rp.empty() ? 0.0 : interpolated_ap(rp);
    }
    auto all_ops = parking_ops(scenes, -1, iou_gate);
    std::vector<std::pair<double, double>> rp;
    for (const auto& o : all_ops) rp.emplace_back(o.recall, o.precision);
    out.all_ap = rp.empty() ? 0.0 : interpolated_ap(rp);
    const ParkingOperating* best = nullptr;
    for (const auto& o : all_ops)
        if (!best || o.f1 > best->f1) best = &o;
    if (best) {
        out.best_f1 = best->f1;
        out.mean_iou = best->mean_iou;
    }
    return out;
}

}  // namespace pbev::metrics
