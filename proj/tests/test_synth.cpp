#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "pbev/synth.hpp"
#include "test_util.hpp"

using namespace pbev;
using namespace pbev::synth;

namespace {

SceneConfig small_cfg() {
    SceneConfig cfg;
    cfg.min_obstacles = 1;
    cfg.max_obstacles = 4;
    cfg.min_parking = 0;
    cfg.max_parking = 2;
    return cfg;
}

bool scenes_equal(const Scene& a, const Scene& b) {
    if (a.obstacles.size() != b.obstacles.size() || a.parking.size() != b.parking.size() ||
        a.freespace.verts.size() != b.freespace.verts.size())
        return false;
    for (size_t i = 0; i < a.obstacles.size(); ++i) {
        const auto& x = a.obstacles[i].cuboid;
        const auto& y = b.obstacles[i].cuboid;
        if (a.obstacles[i].cls != b.obstacles[i].cls || x.r != y.r || x.a != y.a ||
            x.e != y.e || x.dx != y.dx)
            return false;
    }
    for (size_t i = 0; i < a.freespace.verts.size(); ++i)
        if (a.freespace.verts[i] != b.freespace.verts[i] ||
            a.freespace.edge_cls[i] != b.freespace.edge_cls[i])
            return false;
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("scene generation is deterministic in the seed") {
    auto cfg = small_cfg();
    for (uint64_t seed : {1ull, 42ull, 1234567ull}) {
        auto a = generate_scene(cfg, 0, seed);
        auto b = generate_scene(cfg, 0, seed);
        CHECK(scenes_equal(a, b));
        CHECK(!a.obstacles.empty());
        for (const auto& o : a.obstacles) {
            CHECK(o.cuboid.r >= cfg.min_distance);
            CHECK(o.cuboid.r <= cfg.max_distance);
            CHECK(o.cuboid.dz > 0);
        }
    }
    auto c = generate_scene(cfg, 0, 7);
    auto d = generate_scene(cfg, 0, 8);
    CHECK(!scenes_equal(c, d));
}

TEST_CASE("zero obstacles leaves the bare road polygon") {
    auto cfg = small_cfg();
    cfg.min_obstacles = cfg.max_obstacles = 0;
    cfg.min_parking = cfg.max_parking = 0;
    auto s = generate_scene(cfg, 0, 99);
    CHECK(s.obstacles.empty());
    CHECK(s.freespace.verts.size() == 12);
    for (int c : s.freespace.edge_cls) CHECK(c == heads::kFsOther);
}

TEST_CASE("generated freespace polygon matches per-ray boundary oracle") {
    auto cfg = small_cfg();
    cfg.min_obstacles = 2;
    cfg.max_obstacles = 5;
    for (uint64_t seed = 11; seed < 19; ++seed) {
        auto s = generate_scene(cfg, 0, seed);
        auto rdm = heads::rdm_from_polygon(s.freespace, 72, cfg.extent);
        // Oracle: nearest of (road ring hit, any grounded obstacle footprint
        // hit) along each bin direction. The road ring is rebuilt from the
        // polygon's class-Other edges only via rejection of notch edges, so
        // here we instead ray-cast obstacle footprints directly and verify
        // the boundary never exceeds them.
        for (int i = 0; i < 72; ++i) {
            double ang = heads::RadialDistanceMap::direction(i, 72);
            double dx = std::cos(ang), dy = std::sin(ang);
            for (const auto& o : s.obstacles) {
                if (o.cuboid.e - o.cuboid.dz / 2 > 0.3) continue;
                double ox, oy;
                o.cuboid.xy(ox, oy);
                // Ray-rectangle: transform to footprint frame, slab test.
                double yaw = o.cuboid.yaw();
                double c = std::cos(yaw), sn = std::sin(yaw);
                double px = c * (0 - ox) + sn * (0 - oy), py = -sn * (0 - ox) + c * (0 - oy);
                double qx = c * dx + sn * dy, qy = -sn * dx + c * dy;
                double tmin = 0, tmax = 1e300;
                bool hit = true;
                const double oc[2] = {px, py}, dc[2] = {qx, qy};
                const double hc[2] = {o.cuboid.dx / 2, o.cuboid.dy / 2};
                for (int ax = 0; ax < 2; ++ax) {
                    if (std::abs(dc[ax]) < 1e-12) {
                        if (std::abs(oc[ax]) > hc[ax]) hit = false;
                        continue;
                    }
                    double t1 = (-hc[ax] - oc[ax]) / dc[ax];
                    double t2 = (hc[ax] - oc[ax]) / dc[ax];
                    if (t1 > t2) std::swap(t1, t2);
                    tmin = std::max(tmin, t1);
                    tmax = std::min(tmax, t2);
                }
                if (!hit || tmin > tmax || tmin <= 0) continue;
                // The freespace boundary along this ray must stop at (or
                // before) the obstacle's near face.
                CHECK(rdm.radius[i] <= tmin + 1e-6);
            }
        }
    }
}

TEST_CASE("rendered obstacle covers its projected center pixel") {
    SceneConfig cfg = small_cfg();
    cfg.min_obstacles = cfg.max_obstacles = 1;
    cfg.min_parking = cfg.max_parking = 0;
    auto rig = rig_preset("car2");
    int verified = 0;
    for (uint64_t seed = 3; seed < 40 && verified < 6; ++seed) {
        auto s = generate_scene(cfg, 0, seed);
        const auto& o = s.obstacles[0];
        auto views = render_views(s, rig);
        for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
            const auto& cam = rig.cameras[ci];
            double x, y;
            o.cuboid.xy(x, y);
            geom::Vec3 rel = geom::Vec3{x, y, o.cuboid.e} - cam.pose.translation;
            if (rel.norm() < 1.5) continue;  // too close, face factors vary wildly
            geom::Vec3 cam_dir = cam.pose.rotation.inverse() * rel.normalized();
            auto px = cam.intrinsics.project(cam_dir);
            if (!px) continue;
            int ix = int((*px)[0]), iy = int((*px)[1]);
            const auto& v = views[ci];
            double r = v.rgb[size_t(iy) * v.width + ix] / 255.0;
            double g = v.rgb[size_t(v.height) * v.width + size_t(iy) * v.width + ix] / 255.0;
            double b =
                v.rgb[2 * size_t(v.height) * v.width + size_t(iy) * v.width + ix] / 255.0;
            // Class base color scaled by one of the three face factors.
            const double base[4][3] = {{0.85, 0.15, 0.15},
                                       {0.20, 0.80, 0.20},
                                       {0.15, 0.25, 0.90},
                                       {0.90, 0.85, 0.10}};
            const double* c = base[o.cls];
            bool matches = false;
            for (double f : {1.0, 0.82, 0.62})
                if (std::abs(r - c[0] * f) < 0.06 && std::abs(g - c[1] * f) < 0.06 &&
                    std::abs(b - c[2] * f) < 0.06)
                    matches = true;
            CHECK(matches);
            ++verified;
        }
    }
    CHECK(verified >= 4);
}

TEST_CASE("rendering is deterministic and rig-sensitive") {
    auto cfg = small_cfg();
    auto s = generate_scene(cfg, 0, 21);
    auto rig = rig_preset("car2");
    auto v1 = render_views(s, rig);
    auto v2 = render_views(s, rig);
    REQUIRE(v1.size() == v2.size());
    for (size_t i = 0; i < v1.size(); ++i) {
        CHECK(v1[i].rgb == v2[i].rgb);
        CHECK(view_hash(v1[i]) == view_hash(v2[i]));
    }
    auto truck = rig_preset("truck2");
    auto v3 = render_views(s, truck);
    CHECK(view_hash(v3[0]) != view_hash(v1[0]));  // same GT, different imagery
}

TEST_CASE("dataset save/load round trip and image regeneration") {
    auto cfg = small_cfg();
    auto ds = generate_dataset(cfg, "car2", 6, 2024);
    const std::string path = "test_dataset.jsonl";
    save_dataset(ds, path);
    auto back = load_dataset(path);
    CHECK(back.rig_id == "car2");
    CHECK(back.base_seed == 2024);
    REQUIRE(back.scenes.size() == ds.scenes.size());
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        CHECK(back.scenes[i].seed == ds.scenes[i].seed);
        CHECK(back.scenes[i].obstacles.size() == ds.scenes[i].obstacles.size());
        for (size_t j = 0; j < ds.scenes[i].obstacles.size(); ++j) {
            CHECK(back.scenes[i].obstacles[j].cuboid.r ==
                  ds.scenes[i].obstacles[j].cuboid.r);
            CHECK(back.scenes[i].obstacles[j].cuboid.yaw() ==
                  doctest::Approx(ds.scenes[i].obstacles[j].cuboid.yaw()).epsilon(1e-12));
        }
        CHECK(back.scenes[i].freespace.verts == ds.scenes[i].freespace.verts);
    }
    // Images regenerate identically from the stored seeds.
    auto rig = rig_preset("car2");
    auto va = render_views(ds.scenes[2], rig);
    auto vb = render_views(back.scenes[2], rig);
    CHECK(view_hash(va[0]) == view_hash(vb[0]));
    CHECK(view_hash(va[1]) == view_hash(vb[1]));
    std::remove(path.c_str());
}

TEST_CASE("dataset loader errors name the offending line and version") {
    const std::string path = "test_corrupt.jsonl";
    {
        std::ofstream f(path);
        f << R"({"schema":"polarbev-dataset","version":1,"rig":"car2","base_seed":1,"count":1,)"
          << R"("config":{"min_obstacles":1,"max_obstacles":1,"active_classes":1,)"
          << R"("class_mix":[1,0,0,0],"min_distance":2,"max_distance":10,)"
          << R"("base_elevation_lo":0,"base_elevation_hi":0,"min_parking":0,"max_parking":0,)"
          << R"("road_radius_lo":0.5,"road_radius_hi":0.9,"extent":16}})" << "\n";
        f << "{corrupt\n";
    }
    try {
        load_dataset(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    {
        std::ofstream f(path);
        f << R"({"schema":"polarbev-dataset","version":9,"rig":"car2"})" << "\n";
    }
    try {
        load_dataset(path);
        FAIL("expected a version error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("9") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("rig presets load through the rig text format") {
    for (const char* name : {"car2", "truck2", "car8"}) {
        auto rig = rig_preset(name);
        auto round = geom::parse_rig(geom::format_rig(rig));
        CHECK(round.id == rig.id);
        CHECK(round.cameras.size() == rig.cameras.size());
    }
    CHECK_THROWS_AS(rig_preset("bogus"), std::invalid_argument);
}

TEST_SUITE_END();
