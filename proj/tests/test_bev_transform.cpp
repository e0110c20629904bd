#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "pbev/bev_transform.hpp"
#include "pbev/rng.hpp"
#include "test_util.hpp"

using namespace pbev;
using namespace pbev::bev;
using namespace pbev::geom;

TEST_SUITE_BEGIN("bev_transform");

TEST_CASE("polar grid construction") {
    auto g = build_polar_grid(360, 64, 1.0, 200.0);
    CHECK(g.M == 360);
    CHECK(g.N == 64);
    CHECK(g.cells() == 360 * 64);
    CHECK(g.radial_edges.size() == 65);
    CHECK(g.radial_edges[0] == 0.0);
    CHECK(g.radial_edges[1] == doctest::Approx(1.0));
    CHECK(g.radial_edges[64] == 200.0);
    // Geometric spacing from edge 1 on.
    double ratio = g.radial_edges[2] / g.radial_edges[1];
    for (int i = 1; i + 1 <= 64; ++i)
        CHECK(g.radial_edges[i + 1] / g.radial_edges[i] == doctest::Approx(ratio).epsilon(1e-9));

    auto tiny = build_polar_grid(4, 3, 1.0, 4.0);
    CHECK(tiny.radial_edges[0] == 0.0);
    CHECK(tiny.radial_edges[1] == doctest::Approx(1.0));
    CHECK(tiny.radial_edges[2] == doctest::Approx(2.0));
    CHECK(tiny.radial_edges[3] == doctest::Approx(4.0));

    CHECK_THROWS_AS(build_polar_grid(3, 4, 1, 10), std::invalid_argument);
    CHECK_THROWS_AS(build_polar_grid(8, 1, 1, 10), std::invalid_argument);
    CHECK_THROWS_AS(build_polar_grid(8, 4, 5, 2), std::invalid_argument);
}

TEST_CASE("cell_of agrees with a linear scan") {
    Rng rng(101);
    for (int t = 0; t < 40; ++t) {
        auto g = testutil::random_grid(rng);
        for (int s = 0; s < 200; ++s) {
            double x = rng.uniform(-g.r_max * 1.2, g.r_max * 1.2);
            double y = rng.uniform(-g.r_max * 1.2, g.r_max * 1.2);
            auto p = to_polar(x, y);
            auto got = g.cell_of(p.azimuth, p.distance);
            // Oracle: linear scans for both axes.
            int n = -1;
            for (int i = 0; i < g.N; ++i)
                if (p.distance >= g.radial_edges[i] && p.distance < g.radial_edges[i + 1]) {
                    n = i;
                    break;
                }
            if (n < 0) {
                CHECK(!got.has_value());
                continue;
            }
            int m = 0;
            while (m + 1 < g.M && (m + 1) * g.angular_width() <= p.azimuth) ++m;
            REQUIRE(got.has_value());
            CHECK(*got == m * g.N + n);
        }
    }
}

namespace {

RigCamera origin_pinhole(double pitch) {
    RigCamera cam;
    cam.name = "c";
    cam.intrinsics.model = CameraModel::Pinhole;
    cam.intrinsics.fx = cam.intrinsics.fy = 100;
    // Principal point exactly on a column center (u = 15*8 + 3.5).
    cam.intrinsics.cx = 123.5;
    cam.intrinsics.cy = 64;
    cam.intrinsics.width = 256;
    cam.intrinsics.height = 128;
    cam.intrinsics.max_range = 16;
    cam.pose.rotation = camera_mount_rotation(0, pitch, 0);
    cam.pose.translation = {0, 0, 2.0};
    return cam;
}

}  // namespace

TEST_CASE("column curves: aligned pinhole center column is the zero ray") {
    auto grid = build_polar_grid(72, 16, 1.0, 16.0);
    auto cam = origin_pinhole(0.45);
    auto curves = fit_column_curves(cam.intrinsics, cam.pose, grid);
    const ColumnCurve& cc = curves[15];
    REQUIRE(cc.valid);
    for (double d = cc.d_lo; d <= cc.d_hi; d += 0.1) {
        double a = wrap_angle_pi(cc.eval(d));
        CHECK(std::abs(a) < 1e-6);
    }
}

TEST_CASE("column curves: origin-mounted rectified pinhole gives constant curves") {
    // Rays require vertical column planes: level camera, no roll, mounted
    // over the rig origin. Yaw is free.
    auto grid = build_polar_grid(72, 16, 1.0, 16.0);
    auto cam = origin_pinhole(0.0);
    cam.pose.rotation = camera_mount_rotation(0.3, 0.0, 0.0);
    auto curves = fit_column_curves(cam.intrinsics, cam.pose, grid);
    int valid = 0;
    for (const auto& cc : curves) {
        if (!cc.valid) continue;
        ++valid;
        double lo = 1e300, hi = -1e300;
        for (double d = cc.d_lo; d <= cc.d_hi; d += (cc.d_hi - cc.d_lo) / 50.0) {
            double a = cc.eval(d);
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        CHECK(hi - lo < 1e-6);
    }
    CHECK(valid > 20);
}

TEST_CASE("column curves: fisheye matches dense per-pixel projection within 0.5 deg") {
    auto grid = build_polar_grid(72, 16, 1.0, 16.0);
    RigCamera cam;
    cam.intrinsics.model = CameraModel::EquidistantFisheye;
    cam.intrinsics.fx = cam.intrinsics.fy = 78.9;
    cam.intrinsics.cx = 128;
    cam.intrinsics.cy = 64;
    cam.intrinsics.width = 256;
    cam.intrinsics.height = 128;
    cam.intrinsics.max_range = 16;
    cam.pose.rotation = camera_mount_rotation(0.2, 0.3, 0.05);
    cam.pose.translation = {1.6, 0.4, 2.0};

    auto curves = fit_column_curves(cam.intrinsics, cam.pose, grid);
    int checked_cols = 0;
    for (int u : {1, 5, 12, 20, 27, 30}) {
        const auto& cc = curves[u];
        if (!cc.valid) continue;
        ++checked_cols;
        double u_px = u * kFeatureStride + (kFeatureStride - 1) * 0.5;
        int checked = 0;
        for (double v = 0.5; v < cam.intrinsics.height; v += 1.0) {
            auto ray = cam.intrinsics.try_unproject(u_px, v);
            if (!ray) continue;
            auto hit = project_to_ground(cam.pose, *ray);
            if (!hit || hit->distance < cc.d_lo || hit->distance > std::min(cc.d_hi, grid.r_max))
                continue;
            double fitted = wrap_angle_2pi(cc.eval(hit->distance));
            double diff = std::abs(wrap_angle_pi(fitted - hit->azimuth));
            CHECK(diff < 0.5 * M_PI / 180.0);
            ++checked;
        }
        CHECK(checked > 5);
    }
    CHECK(checked_cols >= 4);
}

TEST_CASE("depth bins are increasing and capped") {
    auto bins = build_depth_bins(16, 16.0, 0.5);
    CHECK(bins.D == 16);
    CHECK(bins.centers.front() == doctest::Approx(0.5));
    CHECK(bins.centers.back() == 16.0);
    for (int i = 0; i + 1 < 16; ++i) CHECK(bins.centers[i] < bins.centers[i + 1]);
}

TEST_CASE("lut entries match per-entry recomputation; sentinels behave") {
    Rng rng(211);
    auto grid = build_polar_grid(36, 8, 1.0, 12.0);

    // Hand-made curves: one valid spanning the grid, one valid but out of
    // range for far bins, one invalid.
    ColumnCurve valid;
    valid.camera = 0;
    valid.column = 0;
    valid.c0 = 0.8;
    valid.c1 = 0.15;
    valid.c2 = -0.02;
    valid.c3 = 0.004;
    valid.x_mid = std::log(4.0);
    valid.x_half = 1.2;
    valid.d_lo = 0.2;
    valid.d_hi = 20.0;
    valid.valid = true;

    ColumnCurve narrow = valid;
    narrow.column = 1;
    narrow.d_hi = 3.0;

    ColumnCurve invalid;
    invalid.column = 2;

    auto bins = build_depth_bins(8, 14.0, 0.5);  // last centers beyond r_max=12
    auto lut = build_bev_lut({{valid, narrow, invalid}}, {bins}, grid);
    REQUIRE(lut.cameras.size() == 1);
    const auto& cl = lut.cameras[0];

    for (int b = 0; b < 8; ++b) {
        double d = bins.centers[b];
        auto want = grid.cell_of(wrap_angle_2pi(valid.eval(d)), d);
        int32_t expect = (d >= valid.d_lo && d <= valid.d_hi && want) ? *want : kOffGrid;
        CHECK(cl.at(0, b) == expect);
        CHECK(cl.at(2, b) == kOffGrid);  // invalid column: all sentinel
        if (d > narrow.d_hi) CHECK(cl.at(1, b) == kOffGrid);
        if (d >= grid.r_max) CHECK(cl.at(0, b) == kOffGrid);  // beyond grid range
    }
    // Deterministic: a second build is byte-identical.
    auto lut2 = build_bev_lut({{valid, narrow, invalid}}, {bins}, grid);
    CHECK(lut2.cameras[0].cells == cl.cells);
    CHECK(lut2.cell_sources == lut.cell_sources);
}

namespace {

struct PoolSetup {
    PolarGridSpec grid;
    std::vector<std::vector<ColumnCurve>> curves;
    std::vector<DepthBinSpec> bins;
    BevLut lut;
    std::vector<Tensor> feats;
    int channels = 0;
};

PoolSetup random_pool_setup(Rng& rng) {
    PoolSetup s;
    s.grid = testutil::random_grid(rng);
    auto rig = testutil::random_rig(rng, 1, 3);
    for (size_t i = 0; i < rig.cameras.size(); ++i) {
        const auto& cam = rig.cameras[i];
        s.curves.push_back(fit_column_curves(cam.intrinsics, cam.pose, s.grid, int(i)));
        s.bins.push_back(build_depth_bins(rng.uniform_int(4, 24),
                                          std::min(cam.intrinsics.max_range, s.grid.r_max),
                                          0.4));
    }
    s.lut = build_bev_lut(s.curves, s.bins, s.grid);
    s.channels = rng.uniform_int(1, 8);
    for (size_t i = 0; i < s.curves.size(); ++i)
        s.feats.push_back(testutil::random_tensor(
            rng, {int(s.curves[i].size()), s.bins[i].D, s.channels}));
    return s;
}

}  // namespace

TEST_CASE("lut pooling equals naive on-the-fly projection bit for bit") {
    Rng rng(307);
    for (int t = 0; t < 10; ++t) {
        auto s = random_pool_setup(rng);
        Tensor via_lut = scatter_pool(s.feats, s.lut, s.channels);
        Tensor via_gather = scatter_pool_gather(s.feats, s.lut, s.channels);
        Tensor naive = naive_pool(s.feats, s.curves, s.bins, s.grid, s.channels);
        REQUIRE(via_lut.size() == naive.size());
        for (size_t i = 0; i < via_lut.size(); ++i) {
            CHECK(via_lut[i] == naive[i]);        // identical accumulation order
            CHECK(via_gather[i] == via_lut[i]);   // omp gather matches scatter
        }
    }
}

TEST_CASE("scatter pooling is linear") {
    Rng rng(311);
    auto s = random_pool_setup(rng);
    double alpha = 0.7, beta = -1.3;
    std::vector<Tensor> fa = s.feats, fb, fmix;
    for (const auto& f : s.feats) {
        Tensor b = f;
        for (size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
        fb.push_back(b);
        Tensor m = f;
        for (size_t i = 0; i < m.size(); ++i) m[i] = alpha * f[i] + beta * b[i];
        fmix.push_back(m);
    }
    Tensor pa = scatter_pool(fa, s.lut, s.channels);
    Tensor pb = scatter_pool(fb, s.lut, s.channels);
    Tensor pm = scatter_pool(fmix, s.lut, s.channels);
    for (size_t i = 0; i < pm.size(); ++i)
        CHECK(std::abs(pm[i] - (alpha * pa[i] + beta * pb[i])) < 1e-10);
}

TEST_CASE("zero features pool to a zero map (all-sentinel included)") {
    auto grid = build_polar_grid(12, 4, 1, 8);
    ColumnCurve invalid;
    auto bins = build_depth_bins(4, 8, 0.5);
    auto lut = build_bev_lut({{invalid, invalid}}, {bins}, grid);
    Rng rng(1);
    std::vector<Tensor> feats{testutil::random_tensor(rng, {2, 4, 3})};
    Tensor out = scatter_pool(feats, lut, 3);
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("dropping one camera only changes cells in its lut rows") {
    Rng rng(401);
    for (int t = 0; t < 5; ++t) {
        auto s = random_pool_setup(rng);
        if (s.feats.size() < 2) continue;
        Tensor full = scatter_pool(s.feats, s.lut, s.channels);
        size_t drop = rng.uniform_int(0, int(s.feats.size()) - 1);
        std::vector<Tensor> zeroed = s.feats;
        zeroed[drop].fill(0.0);
        Tensor without = scatter_pool(zeroed, s.lut, s.channels);
        std::set<int32_t> touched;
        for (int32_t c : s.lut.cameras[drop].cells)
            if (c != kOffGrid) touched.insert(c);
        const int cells = s.grid.cells();
        for (int ch = 0; ch < s.channels; ++ch)
            for (int cell = 0; cell < cells; ++cell) {
                if (touched.count(cell)) continue;
                CHECK(full[size_t(ch) * cells + cell] == without[size_t(ch) * cells + cell]);
            }
    }
}

TEST_CASE("ipm table sends ground-plane pixels to their geometric cells") {
    auto grid = build_polar_grid(72, 16, 1.0, 16.0);
    geom::CameraRig rig;
    rig.id = "r";
    auto cam = origin_pinhole(0.5);
    cam.pose.translation = {1.0, 0.3, 2.0};
    rig.cameras.push_back(cam);
    auto lut = build_ipm_lut(rig, grid);
    const auto& cl = lut.cameras[0];
    int hs = cam.intrinsics.height / kFeatureStride;
    int ws = cam.intrinsics.width / kFeatureStride;
    REQUIRE(cl.columns == ws);
    REQUIRE(cl.depth_bins == hs);
    int populated = 0;
    for (int u = 0; u < ws; ++u)
        for (int v = 0; v < hs; ++v) {
            double u_px = u * kFeatureStride + 3.5, v_px = v * kFeatureStride + 3.5;
            auto ray = cam.intrinsics.try_unproject(u_px, v_px);
            REQUIRE(ray.has_value());
            auto hit = project_to_ground(cam.pose, *ray);
            int32_t want = kOffGrid;
            if (hit) {
                auto cell = grid.cell_of(hit->azimuth, hit->distance);
                if (cell) want = *cell;
            }
            CHECK(cl.cells[size_t(u) * hs + v] == want);
            if (want != kOffGrid) ++populated;
        }
    CHECK(populated > 50);
}

TEST_CASE("elevated points overshoot under the flat-world assumption") {
    // A point at height z seen from camera height hc lands at horizontal
    // distance d * hc / (hc - z) from the camera footprint.
    Rng rng(419);
    for (int t = 0; t < 200; ++t) {
        double hc = rng.uniform(1.5, 3.0);
        double z = rng.uniform(0.3, hc - 0.3);
        double d = rng.uniform(2.0, 12.0);
        RigPose pose;
        pose.rotation = camera_mount_rotation(0, 0, 0);
        pose.translation = {0, 0, hc};
        geom::Vec3 target{d, 0, z};
        geom::Vec3 dir_rig = (target - pose.translation).normalized();
        geom::Vec3 dir_cam = pose.rotation.inverse() * dir_rig;
        auto hit = project_to_ground(pose, dir_cam);
        REQUIRE(hit.has_value());
        double expect = d * hc / (hc - z);
        CHECK(hit->distance == doctest::Approx(expect).epsilon(1e-9));
        CHECK(hit->distance > d);  // systematic overshoot
    }
}

TEST_CASE("dump-lut text table") {
    auto grid = build_polar_grid(12, 4, 1.0, 8.0);
    ColumnCurve cc;
    cc.valid = true;
    cc.c0 = 0.01;  // constant azimuth inside angular bin 0
    cc.x_mid = 0;
    cc.x_half = 1;
    cc.d_lo = 0.1;
    cc.d_hi = 8.5;
    auto bins = build_depth_bins(4, 8.0, 1.0);  // centers 1, 2, 4, 8
    auto lut = build_bev_lut({{cc}}, {bins}, grid);
    // Radial edges are exactly [0, 1, 2, 4, 8]; centers land in bins 1, 2, 3
    // and the final center 8 is off-grid.
    CHECK(dump_lut(lut) == "0 0 0 1\n0 0 1 2\n0 0 2 3\n0 0 3 -1\n");
}

TEST_SUITE_END();
