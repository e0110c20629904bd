#include <doctest.h>

#include <algorithm>

#include "pbev/metrics.hpp"
#include "pbev/rng.hpp"

using namespace pbev;
using namespace pbev::metrics;
using heads::GtObstacle;
using heads::ParkingSpace;

namespace {

GtObstacle obstacle_at(double r, double a, int cls = 0, double e = 0.75) {
    GtObstacle g;
    g.cls = cls;
    g.cuboid.r = r;
    g.cuboid.a = a;
    g.cuboid.e = e;
    g.cuboid.dx = 4.0;
    g.cuboid.dy = 1.8;
    g.cuboid.dz = 1.5;
    g.cuboid.rot = geom::euler_to_rotation(a, 0, 0);
    return g;
}

Detection det_at(double r, double a, double conf, int cls = 0) {
    Detection d;
    d.obj = obstacle_at(r, a, cls);
    d.confidence = conf;
    return d;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("match_for_eval: gates accept and reject exactly") {
    MatchGates gates;
    auto gt = obstacle_at(10.0, 1.0);
    // Exact hit.
    auto m = match_for_eval({gt}, {det_at(10.0, 1.0, 0.9)}, gates);
    CHECK(m.tp.size() == 1);
    CHECK(m.fp.empty());
    CHECK(m.fn.empty());
    // 15% radial error: FP + FN.
    m = match_for_eval({gt}, {det_at(11.5, 1.0, 0.9)}, gates);
    CHECK(m.tp.empty());
    CHECK(m.fp.size() == 1);
    CHECK(m.fn.size() == 1);
    // Boundary: exactly 10% radial error fails a strict gate.
    m = match_for_eval({gt}, {det_at(11.0, 1.0, 0.9)}, gates);
    CHECK(m.tp.empty());
    m = match_for_eval({gt}, {det_at(10.9999, 1.0, 0.9)}, gates);
    CHECK(m.tp.size() == 1);
    // Boundary: exactly 2 degrees azimuth fails, just under passes.
    m = match_for_eval({gt}, {det_at(10.0, 1.0 + 2.0 * M_PI / 180.0, 0.9)}, gates);
    CHECK(m.tp.empty());
    m = match_for_eval({gt}, {det_at(10.0, 1.0 + 1.9999 * M_PI / 180.0, 0.9)}, gates);
    CHECK(m.tp.size() == 1);
}

TEST_CASE("match_for_eval: crossing case equals exhaustive min-distance matching") {
    MatchGates gates;
    std::vector<GtObstacle> gts{obstacle_at(10.0, 0.00), obstacle_at(10.0, 0.02),
                                obstacle_at(10.0, 0.04)};
    std::vector<Detection> dets{det_at(10.1, 0.021, 0.9), det_at(9.95, 0.001, 0.8),
                                det_at(10.05, 0.039, 0.7)};
    auto m = match_for_eval(gts, dets, gates);
    REQUIRE(m.tp.size() == 3);
    // Exhaustive: all 6 permutations, minimize total centroid distance among
    // gate-valid complete matchings.
    auto dist = [&](int gi, int di) {
        double gx, gy, dx, dy;
        gts[gi].cuboid.xy(gx, gy);
        dets[di].obj.cuboid.xy(dx, dy);
        return std::hypot(gx - dx, gy - dy);
    };
    std::vector<int> perm{0, 1, 2};
    double best = 1e300;
    std::vector<int> best_perm;
    do {
        double total = dist(0, perm[0]) + dist(1, perm[1]) + dist(2, perm[2]);
        if (total < best) {
            best = total;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (auto [gi, di] : m.tp) CHECK(di == best_perm[gi]);
}

TEST_CASE("detection_kpis: perfect detector and the 1 TP + 1 FP case") {
    std::vector<SceneDetections> scenes(3);
    for (int s = 0; s < 3; ++s) {
        for (int i = 0; i < 4; ++i) {
            auto gt = obstacle_at(4.0 + 2 * i, 0.4 * i + 0.1 * s, i % 2);
            scenes[s].gts.push_back(gt);
            Detection d;
            d.obj = gt;
            d.confidence = 0.9;
            scenes[s].dets.push_back(d);
        }
    }
    auto k = detection_kpis(scenes, 2);
    CHECK(k.map == doctest::Approx(1.0));
    for (const auto& c : k.per_class) {
        CHECK(c.ap == doctest::Approx(1.0));
        CHECK(c.best_f1 == doctest::Approx(1.0));
        CHECK(c.precision == doctest::Approx(1.0));
        CHECK(c.recall == doctest::Approx(1.0));
        CHECK(c.radial_err_pct == doctest::Approx(0.0));
        CHECK(c.orientation_err_deg == doctest::Approx(0.0));
    }

    std::vector<SceneDetections> one(1);
    one[0].gts.push_back(obstacle_at(10, 1.0));
    one[0].dets.push_back(det_at(10, 1.0, 0.7));
    one[0].dets.push_back(det_at(10, 2.5, 0.7));  // far from any gt
    auto k2 = detection_kpis(one, 1);
    CHECK(k2.per_class[0].precision == doctest::Approx(0.5));
    CHECK(k2.per_class[0].recall == doctest::Approx(1.0));
}

TEST_CASE("detection_kpis: hand-built 5-detection ranking matches brute force") {
    std::vector<SceneDetections> scenes(1);
    auto& s = scenes[0];
    s.gts = {obstacle_at(10, 0.0), obstacle_at(10, 1.0), obstacle_at(10, 2.0)};
    s.dets = {det_at(10.0, 0.0, 0.9), det_at(13.0, 0.0, 0.8), det_at(10.0, 1.0, 0.7),
              det_at(10.0, 1.1, 0.6), det_at(10.0, 2.0, 0.5)};
    auto k = detection_kpis(scenes, 1);
    // Frozen expectation, hand-derived: operating points give precision 1 up
    // to recall 1/3, 2/3 up to 2/3, and 0.6 at full recall.
    double expect = (34 * 1.0 + 33 * (2.0 / 3.0) + 34 * 0.6) / 101.0;
    CHECK(k.per_class[0].ap == doctest::Approx(expect).epsilon(1e-9));

    // Independent brute force: recompute matching at every threshold and
    // integrate the envelope directly.
    MatchGates gates;
    std::vector<double> confs{0.9, 0.8, 0.7, 0.6, 0.5};
    std::vector<std::pair<double, double>> rp;
    for (double thr : confs) {
        std::vector<Detection> kept;
        for (const auto& d : s.dets)
            if (d.confidence >= thr) kept.push_back(d);
        auto m = match_for_eval(s.gts, kept, gates);
        double tp = double(m.tp.size());
        rp.emplace_back(tp / double(s.gts.size()), tp / double(kept.size()));
    }
    CHECK(k.per_class[0].ap == doctest::Approx(interpolated_ap(rp)).epsilon(1e-9));
}

TEST_CASE("adding a lower-confidence duplicate of a TP never raises AP") {
    Rng rng(811);
    for (int t = 0; t < 20; ++t) {
        std::vector<SceneDetections> scenes(2);
        for (auto& s : scenes) {
            int n = rng.uniform_int(1, 4);
            for (int i = 0; i < n; ++i) {
                auto gt = obstacle_at(rng.uniform(3, 14), rng.uniform(0, 6.2));
                s.gts.push_back(gt);
                if (rng.uniform() < 0.8) {
                    Detection d;
                    d.obj = gt;
                    d.obj.cuboid.r *= rng.uniform(0.97, 1.03);
                    d.confidence = rng.uniform(0.3, 1.0);
                    s.dets.push_back(d);
                }
                if (rng.uniform() < 0.4)
                    s.dets.push_back(det_at(rng.uniform(3, 14), rng.uniform(0, 6.2),
                                            rng.uniform(0.05, 1.0)));
            }
        }
        auto base = detection_kpis(scenes, 1);
        // Duplicate the first detection of scene 0 at a lower confidence.
        if (scenes[0].dets.empty()) continue;
        Detection dup = scenes[0].dets[0];
        dup.confidence *= 0.5;
        scenes[0].dets.push_back(dup);
        auto with_dup = detection_kpis(scenes, 1);
        CHECK(with_dup.per_class[0].ap <= base.per_class[0].ap + 1e-12);
    }
}

TEST_CASE("safety zone covering everything reproduces the plain mAP") {
    Rng rng(821);
    std::vector<SceneDetections> scenes(3);
    for (auto& s : scenes)
        for (int i = 0; i < 5; ++i) {
            auto gt = obstacle_at(rng.uniform(2, 15), rng.uniform(0, 6.28), i % 2);
            s.gts.push_back(gt);
            Detection d;
            d.obj = gt;
            d.obj.cuboid.r += rng.uniform(-0.2, 0.2);
            d.confidence = rng.uniform(0.2, 1.0);
            s.dets.push_back(d);
        }
    ZoneSpec everything{1e9, 1e9};
    auto k = detection_kpis(scenes, 2, MatchGates{}, everything);
    CHECK(k.safety_map == doctest::Approx(k.map).epsilon(1e-12));

    // And scene/detection permutation leaves KPIs unchanged.
    auto shuffled = scenes;
    std::swap(shuffled[0], shuffled[2]);
    for (auto& s : shuffled) std::reverse(s.dets.begin(), s.dets.end());
    auto k2 = detection_kpis(shuffled, 2, MatchGates{}, everything);
    CHECK(k2.map == doctest::Approx(k.map).epsilon(1e-12));
    CHECK(k2.per_class[0].best_f1 == doctest::Approx(k.per_class[0].best_f1).epsilon(1e-12));
}

TEST_CASE("freespace_kpis: identity, constant smoothness, hand case") {
    heads::RadialDistanceMap gt;
    gt.n_bins = 4;
    gt.radius = {5, 6, 7, 8};
    gt.cls = {0, 1, 2, 0};
    auto k = freespace_kpis({gt}, {gt});
    CHECK(k.relative_gap_pct == doctest::Approx(0.0));
    CHECK(k.absolute_gap_m == doctest::Approx(0.0));
    CHECK(k.success_rate_pct == doctest::Approx(100.0));

    heads::RadialDistanceMap flat;
    flat.n_bins = 8;
    flat.radius.assign(8, 3.0);
    flat.cls.assign(8, 0);
    auto k2 = freespace_kpis({flat}, {flat});
    CHECK(k2.smoothness_m == doctest::Approx(0.0));

    heads::RadialDistanceMap g2, p2;
    g2.n_bins = p2.n_bins = 2;
    g2.radius = {10, 10};
    g2.cls = {0, 0};
    p2.radius = {9, 12};
    p2.cls = {0, 0};
    auto k3 = freespace_kpis({p2}, {g2});
    CHECK(k3.absolute_gap_m == doctest::Approx(1.5));
    CHECK(k3.success_rate_pct == doctest::Approx(50.0));
}

TEST_CASE("parking_kpis: perfect set, strict IoU gate, mixed hand case") {
    auto spot = [](double cx, double cy, double th, int profile, double conf) {
        ParkingSpace p;
        p.cx = cx;
        p.cy = cy;
        p.l = 5.0;
        p.w = 2.5;
        p.theta = th;
        p.profile = profile;
        p.profile_conf = {0, 0, 0};
        p.profile_conf[profile] = conf;
        return p;
    };
    std::vector<SceneParking> perfect(1);
    for (int i = 0; i < 3; ++i) {
        auto g = spot(3.0 + 6 * i, -5.0, 1.2, i, 1.0);
        perfect[0].gts.push_back(g);
        perfect[0].dets.push_back(g);
    }
    auto k = parking_kpis(perfect);
    CHECK(k.best_f1 == doctest::Approx(1.0));
    CHECK(k.mean_iou == doctest::Approx(1.0));
    CHECK(k.all_ap == doctest::Approx(1.0));
    for (int p = 0; p < heads::kParkingProfiles; ++p)
        CHECK(k.profile_ap[p] == doctest::Approx(1.0));

    // IoU 0.65 must not match; shift a det to control the overlap:
    // axis-aligned same-size rectangles sliding along x have
    // IoU = (1-s)/(1+s) with s the shift fraction of length.
    std::vector<SceneParking> near(1);
    auto g = spot(0, 0, 0, 0, 1.0);
    near[0].gts.push_back(g);
    auto d65 = g;
    d65.cx = 5.0 * (1.0 - 0.65) / (1.0 + 0.65);  // IoU exactly 0.65
    near[0].dets.push_back(d65);
    auto k2 = parking_kpis(near);
    CHECK(k2.best_f1 == doctest::Approx(0.0));
    auto d70 = g;
    d70.cx = 5.0 * (1.0 - 0.70) / (1.0 + 0.70) - 1e-9;  // just above the gate
    near[0].dets[0] = d70;
    auto k3 = parking_kpis(near);
    CHECK(k3.best_f1 == doctest::Approx(1.0));

    // Mixed set of 4: two perfect, one barely-missing, one wrong profile.
    std::vector<SceneParking> mixed(1);
    auto g0 = spot(0, 0, 0.3, 0, 1.0);
    auto g1 = spot(10, 0, 1.0, 1, 1.0);
    auto g2 = spot(20, 0, 2.0, 2, 1.0);
    auto g3 = spot(30, 0, 0.0, 0, 1.0);
    mixed[0].gts = {g0, g1, g2, g3};
    auto d0 = g0;
    d0.profile_conf = {0.9, 0, 0};
    auto d1 = g1;
    d1.profile_conf = {0, 0.8, 0};
    auto d2 = g2;
    d2.cx += 3.0;  // IoU well below gate
    d2.profile_conf = {0, 0, 0.7};
    auto d3 = g3;
    d3.profile = 1;  // wrong profile: pooled matching may still pair it
    d3.profile_conf = {0, 0.6, 0};
    mixed[0].dets = {d0, d1, d2, d3};
    auto k4 = parking_kpis(mixed);
    // Pooled: thresholds 0.9/0.8/0.7/0.6; at 0.6 TP=3 (g0, g1, g3) FP=1 FN=1.
    CHECK(k4.best_f1 == doctest::Approx(2.0 * (3.0 / 4.0) * (3.0 / 4.0) /
                                        (3.0 / 4.0 + 3.0 / 4.0)));
    // Per-profile AP: profile 0 sees only d0 (det d3 carries profile 1), one
    // perfect detection of two gts: precision 1 up to recall 0.5, then 0.
    CHECK(k4.profile_ap[0] == doctest::Approx(51.0 / 101.0).epsilon(1e-9));
    CHECK(k4.profile_ap[2] == doctest::Approx(0.0));
}

TEST_SUITE_END();
