#include "pbev/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pbev/rng.hpp"

namespace pbev::synth {

using heads::FreespacePolygon;
using heads::GtObstacle;
using heads::ParkingSpace;
using json = nlohmann::ordered_json;

const char* obstacle_class_name(int cls) {
    switch (cls) {
        case kVehicle: return "Vehicle";
        case kTruck: return "Truck";
        case kPerson: return "Person";
        case kBikeRider: return "BikeRider";
        default: return "Unknown";
    }
}

int freespace_class_of(int obstacle_cls) {
    return (obstacle_cls == kVehicle || obstacle_cls == kTruck) ? heads::kFsVehicle
                                                                : heads::kFsVru;
}

// ---- rig presets ----

namespace {

geom::RigCamera fisheye(const std::string& name, double theta_max, double x, double y,
                        double z, double yaw, double pitch, double range) {
    geom::RigCamera cam;
    cam.name = name;
    cam.intrinsics.model = geom::CameraModel::EquidistantFisheye;
    cam.intrinsics.width = 256;
    cam.intrinsics.height = 128;
    cam.intrinsics.fx = cam.intrinsics.fy = 128.0 / theta_max;
    cam.intrinsics.cx = 128;
    cam.intrinsics.cy = 64;
    cam.intrinsics.max_range = range;
    cam.mount_yaw = yaw;
    cam.mount_pitch = pitch;
    cam.pose.rotation = geom::camera_mount_rotation(yaw, pitch, 0);
    cam.pose.translation = {x, y, z};
    return cam;
}

geom::RigCamera pinhole(const std::string& name, double fx, double x, double y, double z,
                        double yaw, double pitch, double range) {
    geom::RigCamera cam;
    cam.name = name;
    cam.intrinsics.model = geom::CameraModel::Pinhole;
    cam.intrinsics.width = 256;
    cam.intrinsics.height = 128;
    cam.intrinsics.fx = cam.intrinsics.fy = fx;
    cam.intrinsics.cx = 128;
    cam.intrinsics.cy = 64;
    cam.intrinsics.max_range = range;
    cam.mount_yaw = yaw;
    cam.mount_pitch = pitch;
    cam.pose.rotation = geom::camera_mount_rotation(yaw, pitch, 0);
    cam.pose.translation = {x, y, z};
    return cam;
}

}  // namespace

geom::CameraRig rig_preset(const std::string& name) {
    geom::CameraRig rig;
    rig.id = name;
    if (name == "car2") {
        rig.cameras.push_back(fisheye("front", 1.623, 1.8, 0.0, 2.0, 0.0, 0.12, 16));
        rig.cameras.push_back(fisheye("rear", 1.623, -1.8, 0.0, 2.0, M_PI, 0.12, 16));
    } else if (name == "truck2") {
        rig.cameras.push_back(fisheye("front", 1.623, 2.8, 0.0, 2.6, 0.0, 0.20, 16));
        rig.cameras.push_back(fisheye("rear", 1.623, -4.2, 0.0, 2.6, M_PI, 0.20, 16));
    } else if (name == "car8") {
        rig.cameras.push_back(pinhole("front_tele", 220, 1.9, 0.0, 1.6, 0.0, 0.02, 24));
        rig.cameras.push_back(pinhole("front_wide", 95, 1.9, 0.0, 1.6, 0.0, 0.10, 20));
        rig.cameras.push_back(pinhole("side_left", 95, 0.5, 0.9, 1.5, M_PI / 2, 0.15, 16));
        rig.cameras.push_back(pinhole("side_right", 95, 0.5, -0.9, 1.5, -M_PI / 2, 0.15, 16));
        rig.cameras.push_back(fisheye("fish_front", 1.65, 2.2, 0.0, 1.0, 0.0, 0.25, 12));
        rig.cameras.push_back(fisheye("fish_left", 1.65, 0.8, 1.0, 1.2, M_PI / 2, 0.25, 12));
        rig.cameras.push_back(fisheye("fish_right", 1.65, 0.8, -1.0, 1.2, -M_PI / 2, 0.25, 12));
        rig.cameras.push_back(fisheye("fish_rear", 1.65, -2.2, 0.0, 1.1, M_PI, 0.25, 12));
    } else {
        throw std::invalid_argument("unknown rig preset: " + name);
    }
    return rig;
}

// ---- scene generation ----

namespace {

using Pt = std::array<double, 2>;

double raycast_edges(const std::vector<Pt>& verts, double angle) {
    double dx = std::cos(angle), dy = std::sin(angle);
    double best = 1e300;
    const size_t n = verts.size();
    for (size_t e = 0; e < n; ++e) {
        const Pt& p = verts[e];
        const Pt& q = verts[(e + 1) % n];
        double ex = q[0] - p[0], ey = q[1] - p[1];
        double det = dx * (-ey) - (-ex) * dy;
        if (std::abs(det) < 1e-15) continue;
        double t = (p[0] * (-ey) - (-ex) * p[1]) / det;
        double u = (dx * p[1] - dy * p[0]) / det;
        if (t > 1e-12 && u >= -1e-9 && u < 1.0 + 1e-9) best = std::min(best, t);
    }
    return best;
}

std::vector<Pt> footprint_corners(double cx, double cy, double hx, double hy, double yaw) {
    double c = std::cos(yaw), s = std::sin(yaw);
    const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
    std::vector<Pt> out(4);
    for (int i = 0; i < 4; ++i)
        out[i] = {cx + c * sx[i] * hx - s * sy[i] * hy, cy + s * sx[i] * hx + c * sy[i] * hy};
    return out;
}

struct Notch {
    double a1 = 0, a2 = 0;  // unwrapped around the obstacle azimuth, a1 < a2
    std::vector<Pt> chain;  // near-side corners from a1 to a2
    int cls = heads::kFsOther;
};

// Near-visible corner chain of a footprint rectangle seen from the origin.
Notch make_notch(const std::vector<Pt>& corners, double center_az, int fs_cls) {
    Notch n;
    n.cls = fs_cls;
    struct CA {
        double az;
        Pt p;
        double r;
    };
    std::vector<CA> cas;
    for (const auto& c : corners) {
        double az = std::atan2(c[1], c[0]);
        while (az - center_az > M_PI) az -= 2 * M_PI;
        while (az - center_az < -M_PI) az += 2 * M_PI;
        cas.push_back({az, c, std::hypot(c[0], c[1])});
    }
    std::sort(cas.begin(), cas.end(), [](const CA& a, const CA& b) { return a.az < b.az; });
    n.a1 = cas.front().az;
    n.a2 = cas.back().az;
    for (const auto& ca : cas) {
        bool extreme = (&ca == &cas.front()) || (&ca == &cas.back());
        // An interior corner joins the chain when the ray toward it hits the
        // rectangle boundary at the corner itself.
        if (extreme || raycast_edges(corners, ca.az) >= ca.r - 1e-6) n.chain.push_back(ca.p);
    }
    return n;
}

struct ClassSpec {
    double dx, dy, dz, jitter;
};

const ClassSpec kClassSpecs[kObstacleClasses] = {
    {4.4, 1.8, 1.5, 0.10},   // Vehicle
    {7.0, 2.5, 3.0, 0.10},   // Truck
    {0.5, 0.5, 1.75, 0.08},  // Person
    {1.8, 0.6, 1.7, 0.08},   // BikeRider
};

}  // namespace

Scene generate_scene(const SceneConfig& cfg, long id, uint64_t seed) {
    Rng rng(seed);
    Scene scene;
    scene.id = id;
    scene.seed = seed;

    // Road boundary: star-shaped polygon around the origin.
    const int road_sides = 12;
    std::vector<double> road_r(road_sides);
    std::vector<Pt> road(road_sides);
    for (int i = 0; i < road_sides; ++i) {
        double ang = 2 * M_PI * i / road_sides + rng.uniform(-0.08, 0.08);
        double r = cfg.extent * rng.uniform(cfg.road_radius_lo, cfg.road_radius_hi);
        road[i] = {r * std::cos(ang), r * std::sin(ang)};
        road_r[i] = r;
    }

    // Obstacles: rejection sampling with disjoint angular intervals so the
    // freespace notches stay well-defined and nothing occludes anything.
    const int want = rng.uniform_int(cfg.min_obstacles, cfg.max_obstacles);
    std::vector<std::pair<double, double>> intervals;  // (lo, hi) wrapped pairs
    int attempts = 0;
    const int max_attempts = 120 + 60 * want;
    std::array<double, kObstacleClasses> mix{};
    for (int c = 0; c < cfg.active_classes; ++c) mix[c] = cfg.class_mix[c];
    while (int(scene.obstacles.size()) < want && attempts < max_attempts) {
        ++attempts;
        int cls = rng.pick_weighted(mix.data(), cfg.active_classes);
        const ClassSpec& spec = kClassSpecs[cls];
        GtObstacle gt;
        gt.cls = cls;
        gt.cuboid.dx = spec.dx * rng.uniform(1 - spec.jitter, 1 + spec.jitter);
        gt.cuboid.dy = spec.dy * rng.uniform(1 - spec.jitter, 1 + spec.jitter);
        gt.cuboid.dz = spec.dz * rng.uniform(1 - spec.jitter, 1 + spec.jitter);
        double d = rng.uniform(cfg.min_distance, cfg.max_distance);
        double a = rng.uniform(0, 2 * M_PI);
        double yaw = rng.uniform(0, 2 * M_PI);
        double base = rng.uniform(cfg.base_elevation_lo, cfg.base_elevation_hi);
        gt.cuboid.r = d;
        gt.cuboid.a = a;
        gt.cuboid.e = base + gt.cuboid.dz / 2;
        gt.cuboid.rot = geom::euler_to_rotation(yaw, 0, 0);

        double diag = std::hypot(gt.cuboid.dx, gt.cuboid.dy);
        if (d <= diag / 2 + 0.5) continue;
        double half_span = std::asin(std::min(0.95, (diag / 2) / d)) + 0.05;
        double lo = geom::wrap_angle_2pi(a - half_span), hi = geom::wrap_angle_2pi(a + half_span);
        bool clash = false;
        for (const auto& [ilo, ihi] : intervals) {
            // Overlap test on the circle.
            auto inside = [](double x, double l, double h) {
                double span = geom::wrap_angle_2pi(h - l);
                return geom::wrap_angle_2pi(x - l) <= span;
            };
            if (inside(lo, ilo, ihi) || inside(hi, ilo, ihi) || inside(ilo, lo, hi)) {
                clash = true;
                break;
            }
        }
        if (clash) continue;
        // Entirely inside the road ring.
        bool in_road = true;
        for (double probe : {lo, a, hi})
            if (raycast_edges(road, probe) < d + diag / 2 + 0.8) in_road = false;
        if (!in_road) continue;
        intervals.emplace_back(lo, hi);
        scene.obstacles.push_back(gt);
    }
    if (int(scene.obstacles.size()) < cfg.min_obstacles)
        throw std::runtime_error("generate_scene: could not place the requested obstacles");

    // Parking rectangles in lateral bands, clear of obstacles and each other.
    const int want_park = rng.uniform_int(cfg.min_parking, cfg.max_parking);
    int park_attempts = 0;
    while (int(scene.parking.size()) < want_park && park_attempts < 80) {
        ++park_attempts;
        ParkingSpace p;
        p.profile = rng.uniform_int(0, heads::kParkingProfiles - 1);
        double jitter = rng.uniform(0.9, 1.1);
        if (p.profile == heads::kParallel) {
            p.l = 6.0 * jitter;
            p.w = 2.2 * jitter;
            p.theta = geom::wrap_angle_2pi(rng.uniform(-0.08, 0.08));
        } else if (p.profile == heads::kPerpendicular) {
            p.l = 5.0 * jitter;
            p.w = 2.5 * jitter;
            p.theta = M_PI / 2 + rng.uniform(-0.08, 0.08);
        } else {
            p.l = 5.2 * jitter;
            p.w = 2.5 * jitter;
            p.theta = M_PI / 4 + rng.uniform(-0.12, 0.12);
        }
        if (p.theta >= M_PI) p.theta -= M_PI;
        if (p.theta < 0) p.theta += M_PI;
        p.cx = rng.uniform(-0.55, 0.55) * cfg.extent;
        double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p.cy = side * rng.uniform(0.27, 0.5) * cfg.extent;
        p.profile_conf = {0, 0, 0};
        p.profile_conf[p.profile] = 1.0;

        auto pp = geom::to_polar(p.cx, p.cy);
        double pdiag = std::hypot(p.l, p.w) / 2;
        if (raycast_edges(road, pp.azimuth) < pp.distance + pdiag + 0.5) continue;
        bool clash = false;
        for (const auto& o : scene.obstacles) {
            double ox, oy;
            o.cuboid.xy(ox, oy);
            if (std::hypot(ox - p.cx, oy - p.cy) <
                pdiag + std::hypot(o.cuboid.dx, o.cuboid.dy) / 2 + 0.4)
                clash = true;
        }
        for (const auto& q : scene.parking)
            if (std::hypot(q.cx - p.cx, q.cy - p.cy) <
                pdiag + std::hypot(q.l, q.w) / 2 + 0.4)
                clash = true;
        if (clash) continue;
        scene.parking.push_back(p);
    }

    // Freespace polygon: road ring with one notch per grounded obstacle.
    std::vector<Notch> notches;
    for (const auto& o : scene.obstacles) {
        if (o.cuboid.e - o.cuboid.dz / 2 > 0.3) continue;  // airborne: no notch
        double ox, oy;
        o.cuboid.xy(ox, oy);
        auto corners =
            footprint_corners(ox, oy, o.cuboid.dx / 2, o.cuboid.dy / 2, o.cuboid.yaw());
        notches.push_back(make_notch(corners, o.cuboid.a, freespace_class_of(o.cls)));
    }
    std::sort(notches.begin(), notches.end(), [](const Notch& a, const Notch& b) {
        return geom::wrap_angle_2pi(a.a1) < geom::wrap_angle_2pi(b.a1);
    });

    FreespacePolygon& poly = scene.freespace;
    auto road_point = [&](double ang) -> Pt {
        double r = raycast_edges(road, ang);
        return {r * std::cos(ang), r * std::sin(ang)};
    };
    auto in_notch = [&](double ang) {
        for (const auto& nt : notches) {
            double span = geom::wrap_angle_2pi(nt.a2 - nt.a1);
            if (geom::wrap_angle_2pi(ang - geom::wrap_angle_2pi(nt.a1)) <= span) return true;
        }
        return false;
    };
    struct Ev {
        double az;
        bool is_notch;
        int idx;  // road vertex or notch index
    };
    std::vector<Ev> events;
    for (int i = 0; i < road_sides; ++i) {
        double az = geom::wrap_angle_2pi(std::atan2(road[i][1], road[i][0]));
        if (!in_notch(az)) events.push_back({az, false, i});
    }
    for (size_t i = 0; i < notches.size(); ++i)
        events.push_back({geom::wrap_angle_2pi(notches[i].a1), true, int(i)});
    std::sort(events.begin(), events.end(),
              [](const Ev& a, const Ev& b) { return a.az < b.az; });
    for (const auto& ev : events) {
        if (!ev.is_notch) {
            poly.verts.push_back(road[ev.idx]);
            poly.edge_cls.push_back(heads::kFsOther);
            continue;
        }
        const Notch& nt = notches[ev.idx];
        poly.verts.push_back(road_point(nt.a1));
        poly.edge_cls.push_back(nt.cls);  // radial cut inward
        for (const auto& c : nt.chain) {
            poly.verts.push_back(c);
            poly.edge_cls.push_back(nt.cls);
        }
        // Last chain edge connects outward to the road again; the class of
        // that radial edge stays with the obstacle, the following road edge
        // is restored by the next event's vertex.
        poly.verts.push_back(road_point(nt.a2));
        poly.edge_cls.push_back(heads::kFsOther);
    }
    return scene;
}

// ---- rendering ----

namespace {

struct Shade {
    double r, g, b;
};

const Shade kClassShade[kObstacleClasses] = {
    {0.85, 0.15, 0.15},  // Vehicle: red
    {0.20, 0.80, 0.20},  // Truck: green
    {0.15, 0.25, 0.90},  // Person: blue
    {0.90, 0.85, 0.10},  // BikeRider: yellow
};
const Shade kProfileShade[heads::kParkingProfiles] = {
    {0.85, 0.55, 0.15},
    {0.15, 0.80, 0.80},
    {0.75, 0.20, 0.80},
};

struct Box {
    geom::Vec3 center;
    geom::RotationMatrix rot;  // box frame -> rig frame
    double hx, hy, hz;
    int cls;
};

// Slab intersection in the box frame; returns entry distance and axis.
bool ray_box(const geom::Vec3& origin, const geom::Vec3& dir, const Box& b, double& t_hit,
             int& axis_hit) {
    geom::Vec3 o = b.rot.inverse() * (origin - b.center);
    geom::Vec3 d = b.rot.inverse() * dir;
    double tmin = 0.0, tmax = 1e300;
    int axis = -1;
    const double oc[3] = {o.x, o.y, o.z};
    const double dc[3] = {d.x, d.y, d.z};
    const double hc[3] = {b.hx, b.hy, b.hz};
    for (int i = 0; i < 3; ++i) {
        if (std::abs(dc[i]) < 1e-12) {
            if (std::abs(oc[i]) > hc[i]) return false;
            continue;
        }
        double t1 = (-hc[i] - oc[i]) / dc[i];
        double t2 = (hc[i] - oc[i]) / dc[i];
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
            tmin = t1;
            axis = i;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return false;
    }
    if (axis < 0 || tmin <= 1e-9) return false;  // origin inside or degenerate
    t_hit = tmin;
    axis_hit = axis;
    return true;
}

bool in_rect(double x, double y, const ParkingSpace& p) {
    double c = std::cos(p.theta), s = std::sin(p.theta);
    double px = x - p.cx, py = y - p.cy;
    double lx = c * px + s * py, ly = -s * px + c * py;
    return std::abs(lx) <= p.l / 2 && std::abs(ly) <= p.w / 2;
}

}  // namespace

std::vector<RenderedView> render_views(const Scene& scene, const geom::CameraRig& rig) {
    std::vector<Box> boxes;
    for (const auto& o : scene.obstacles) {
        Box b;
        double x, y;
        o.cuboid.xy(x, y);
        b.center = {x, y, o.cuboid.e};
        b.rot = o.cuboid.rot;
        b.hx = o.cuboid.dx / 2;
        b.hy = o.cuboid.dy / 2;
        b.hz = o.cuboid.dz / 2;
        b.cls = o.cls;
        boxes.push_back(b);
    }
    // Freespace boundary radius table for ground shading.
    const int kRays = 720;
    std::vector<double> bound(kRays);
    for (int i = 0; i < kRays; ++i)
        bound[i] = raycast_edges(scene.freespace.verts, 2 * M_PI * i / kRays);

    std::vector<RenderedView> views;
    for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
        const auto& cam = rig.cameras[ci];
        const int w = cam.intrinsics.width, h = cam.intrinsics.height;
        RenderedView view;
        view.width = w;
        view.height = h;
        view.rgb.assign(size_t(3) * w * h, 0);
        uint64_t noise_base = hash_combine(scene.seed, 0x9d2c5680 + ci);
        for (int py = 0; py < h; ++py) {
            for (int px = 0; px < w; ++px) {
                auto ray = cam.intrinsics.try_unproject(px + 0.5, py + 0.5);
                Shade shade{0.05, 0.05, 0.08};  // outside fisheye validity
                if (ray) {
                    geom::Vec3 dir = cam.pose.dir_to_rig(*ray);
                    const geom::Vec3& origin = cam.pose.translation;
                    double t_best = 1e300;
                    int best_box = -1, best_axis = 0;
                    for (size_t bi = 0; bi < boxes.size(); ++bi) {
                        double t;
                        int axis;
                        if (ray_box(origin, dir, boxes[bi], t, axis) && t < t_best) {
                            t_best = t;
                            best_box = int(bi);
                            best_axis = axis;
                        }
                    }
                    double t_ground = (dir.z < -1e-9) ? -origin.z / dir.z : 1e300;
                    if (best_box >= 0 && t_best < t_ground) {
                        const double face[3] = {1.0, 0.82, 0.62};
                        const Shade& base = kClassShade[boxes[best_box].cls];
                        double f = face[best_axis];
                        shade = {base.r * f, base.g * f, base.b * f};
                    } else if (t_ground < 1e300) {
                        double gx = origin.x + dir.x * t_ground;
                        double gy = origin.y + dir.y * t_ground;
                        double gr = std::hypot(gx, gy);
                        double ga = geom::wrap_angle_2pi(std::atan2(gy, gx));
                        int band = int(std::floor(gr)) % 2;
                        double free_r = bound[int(ga / (2 * M_PI) * kRays) % kRays];
                        if (gr <= free_r) {
                            double g = 0.42 + 0.08 * band;
                            shade = {g, g, g * 0.97};
                            for (const auto& p : scene.parking)
                                if (in_rect(gx, gy, p)) {
                                    const Shade& pc = kProfileShade[p.profile];
                                    shade = {0.25 * shade.r + 0.75 * pc.r,
                                             0.25 * shade.g + 0.75 * pc.g,
                                             0.25 * shade.b + 0.75 * pc.b};
                                    break;
                                }
                        } else {
                            double g = 0.22 + 0.03 * band;
                            shade = {g, g * 1.05, g};
                        }
                    } else {
                        shade = {0.55, 0.68, 0.85};  // sky
                    }
                }
                uint64_t hsh = mix64(noise_base ^ (uint64_t(py) << 20) ^ uint64_t(px));
                auto noise = [&](int k) {
                    return (double((hsh >> (16 * k)) & 0xffff) / 65535.0 - 0.5) * 0.04;
                };
                auto to_u8 = [](double v) {
                    return uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
                };
                size_t idx = size_t(py) * w + px;
                view.rgb[idx] = to_u8(shade.r + noise(0));
                view.rgb[size_t(h) * w + idx] = to_u8(shade.g + noise(1));
                view.rgb[2 * size_t(h) * w + idx] = to_u8(shade.b + noise(2));
            }
        }
        views.push_back(std::move(view));
    }
    return views;
}

Tensor view_to_tensor(const RenderedView& v) {
    Tensor t = Tensor::zeros3(3, v.height, v.width);
    for (size_t i = 0; i < v.rgb.size(); ++i) t[i] = v.rgb[i] / 255.0;
    return t;
}

uint64_t view_hash(const RenderedView& v) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (uint8_t b : v.rgb) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---- dataset io ----

namespace {

json config_to_json(const SceneConfig& c) {
    return json{{"min_obstacles", c.min_obstacles},
                {"max_obstacles", c.max_obstacles},
                {"active_classes", c.active_classes},
                {"class_mix", c.class_mix},
                {"min_distance", c.min_distance},
                {"max_distance", c.max_distance},
                {"base_elevation_lo", c.base_elevation_lo},
                {"base_elevation_hi", c.base_elevation_hi},
                {"min_parking", c.min_parking},
                {"max_parking", c.max_parking},
                {"road_radius_lo", c.road_radius_lo},
                {"road_radius_hi", c.road_radius_hi},
                {"extent", c.extent}};
}

SceneConfig config_from_json(const json& j) {
    SceneConfig c;
    c.min_obstacles = j.at("min_obstacles");
    c.max_obstacles = j.at("max_obstacles");
    c.active_classes = j.at("active_classes");
    c.class_mix = j.at("class_mix");
    c.min_distance = j.at("min_distance");
    c.max_distance = j.at("max_distance");
    c.base_elevation_lo = j.at("base_elevation_lo");
    c.base_elevation_hi = j.at("base_elevation_hi");
    c.min_parking = j.at("min_parking");
    c.max_parking = j.at("max_parking");
    c.road_radius_lo = j.at("road_radius_lo");
    c.road_radius_hi = j.at("road_radius_hi");
    c.extent = j.at("extent");
    return c;
}

constexpr int kSchemaVersion = 1;

}  // namespace

Dataset generate_dataset(const SceneConfig& cfg, const std::string& rig_id, int count,
                         uint64_t base_seed) {
    Dataset ds;
    ds.rig_id = rig_id;
    ds.base_seed = base_seed;
    ds.count = count;
    ds.config = cfg;
    ds.scenes.reserve(count);
    for (int i = 0; i < count; ++i) {
        uint64_t seed = hash_combine(base_seed, uint64_t(i) + 1);
        auto scene = generate_scene(cfg, i, seed);
        scene.rig_id = rig_id;
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write dataset: " + path);
    json header{{"schema", "polarbev-dataset"},
                {"version", kSchemaVersion},
                {"rig", ds.rig_id},
                {"base_seed", ds.base_seed},
                {"count", ds.count},
                {"config", config_to_json(ds.config)}};
    f << header.dump() << "\n";
    for (const auto& s : ds.scenes) {
        json rec{{"id", s.id}, {"seed", s.seed}};
        json obs = json::array();
        for (const auto& o : s.obstacles)
            obs.push_back(json{{"cls", o.cls},
                               {"r", o.cuboid.r},
                               {"a", o.cuboid.a},
                               {"e", o.cuboid.e},
                               {"dx", o.cuboid.dx},
                               {"dy", o.cuboid.dy},
                               {"dz", o.cuboid.dz},
                               {"yaw", o.cuboid.yaw()}});
        rec["obstacles"] = std::move(obs);
        json verts = json::array(), cls = json::array();
        for (const auto& v : s.freespace.verts) verts.push_back(json::array({v[0], v[1]}));
        for (int c : s.freespace.edge_cls) cls.push_back(c);
        rec["freespace"] = json{{"verts", std::move(verts)}, {"edge_cls", std::move(cls)}};
        json park = json::array();
        for (const auto& p : s.parking)
            park.push_back(json{{"cx", p.cx},
                                {"cy", p.cy},
                                {"l", p.l},
                                {"w", p.w},
                                {"theta", p.theta},
                                {"profile", p.profile}});
        rec["parking"] = std::move(park);
        f << rec.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset: " + path);
    std::string line;
    int line_no = 0;
    Dataset ds;
    bool have_header = false;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("dataset " + path + " line " + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        if (!have_header) {
            if (j.value("schema", "") != "polarbev-dataset")
                throw std::runtime_error("dataset " + path + " line 1: not a dataset header");
            int version = j.at("version");
            if (version != kSchemaVersion)
                throw std::runtime_error("dataset " + path + ": schema version " +
                                         std::to_string(version) + " unsupported (expected " +
                                         std::to_string(kSchemaVersion) + ")");
            ds.rig_id = j.at("rig");
            ds.base_seed = j.at("base_seed");
            ds.count = j.at("count");
            ds.config = config_from_json(j.at("config"));
            have_header = true;
            continue;
        }
        try {
            Scene s;
            s.id = j.at("id");
            s.seed = j.at("seed");
            s.rig_id = ds.rig_id;
            for (const auto& o : j.at("obstacles")) {
                GtObstacle g;
                g.cls = o.at("cls");
                g.cuboid.r = o.at("r");
                g.cuboid.a = o.at("a");
                g.cuboid.e = o.at("e");
                g.cuboid.dx = o.at("dx");
                g.cuboid.dy = o.at("dy");
                g.cuboid.dz = o.at("dz");
                g.cuboid.rot = geom::euler_to_rotation(o.at("yaw"), 0, 0);
                s.obstacles.push_back(g);
            }
            const auto& fs = j.at("freespace");
            for (const auto& v : fs.at("verts"))
                s.freespace.verts.push_back({v.at(0), v.at(1)});
            for (const auto& c : fs.at("edge_cls")) s.freespace.edge_cls.push_back(c);
            for (const auto& p : j.at("parking")) {
                ParkingSpace ps;
                ps.cx = p.at("cx");
                ps.cy = p.at("cy");
                ps.l = p.at("l");
                ps.w = p.at("w");
                ps.theta = p.at("theta");
                ps.profile = p.at("profile");
                ps.profile_conf = {0, 0, 0};
                ps.profile_conf[ps.profile] = 1.0;
                s.parking.push_back(ps);
            }
            ds.scenes.push_back(std::move(s));
        } catch (const std::runtime_error&) {
            throw;
        } catch (const std::exception& e) {
            throw std::runtime_error("dataset " + path + " line " + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
    }
    if (!have_header) throw std::runtime_error("dataset " + path + ": empty file");
    return ds;
}

}  // namespace pbev::synth
