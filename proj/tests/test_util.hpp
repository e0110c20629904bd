#pragma once

#include <functional>
#include <map>
#include <string>

#include "pbev/bev_transform.hpp"
#include "pbev/geometry.hpp"
#include "pbev/model.hpp"
#include "pbev/rng.hpp"

namespace pbev::testutil {

// Finite-difference check over named parameter tensors driven through a
// Leaves-consuming builder (the network forward path). Samples up to
// max_per_param elements of each tensor to keep runtimes sane.
inline double named_grad_check(
    const std::vector<model::Param>& params,
    const std::function<ad::NodePtr(const model::Leaves&)>& build, double eps = 1e-6,
    int max_per_param = 0, std::string* worst_name = nullptr) {
    model::Leaves leaves;
    std::map<std::string, Tensor> values;
    for (const auto& p : params) {
        values[p.name] = p.value;
        leaves.nodes[p.name] = ad::leaf(p.value, true, p.name);
    }
    auto root = build(leaves);
    ad::backward(root);

    auto eval = [&]() {
        model::Leaves l;
        for (const auto& [name, v] : values) l.nodes[name] = ad::leaf(v, false);
        return build(l)->val[0];
    };

    Rng pick(1234577);
    double worst = 0;
    for (const auto& p : params) {
        Tensor& v = values[p.name];
        const auto& leaf = leaves.nodes[p.name];
        size_t n = v.size();
        std::vector<size_t> idx;
        if (max_per_param > 0 && n > size_t(max_per_param)) {
            for (int k = 0; k < max_per_param; ++k) idx.push_back(pick.next() % n);
        } else {
            for (size_t i = 0; i < n; ++i) idx.push_back(i);
        }
        for (size_t i : idx) {
            double saved = v[i];
            v[i] = saved + eps;
            double fp = eval();
            v[i] = saved - eps;
            double fm = eval();
            v[i] = saved;
            double fd = (fp - fm) / (2 * eps);
            double an = leaf->has_grad() ? leaf->grad[i] : 0.0;
            double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
            if (err > worst) {
                worst = err;
                if (worst_name) *worst_name = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return worst;
}

inline geom::CameraIntrinsics random_camera(Rng& rng) {
    geom::CameraIntrinsics c;
    bool fish = rng.uniform() < 0.5;
    c.model = fish ? geom::CameraModel::EquidistantFisheye : geom::CameraModel::Pinhole;
    c.width = 8 * rng.uniform_int(12, 32);
    c.height = 8 * rng.uniform_int(8, 16);
    c.cx = c.width / 2.0 + rng.uniform(-4, 4);
    c.cy = c.height / 2.0 + rng.uniform(-4, 4);
    if (fish) {
        double theta_max = rng.uniform(1.1, 1.7);
        c.fx = c.fy = (c.width / 2.0) / theta_max;
        if (rng.uniform() < 0.5) c.distortion = {rng.uniform(-0.03, 0.03)};
    } else {
        c.fx = rng.uniform(0.6, 1.4) * c.width / 2.0;
        c.fy = c.fx * rng.uniform(0.9, 1.1);
        if (rng.uniform() < 0.5) c.distortion = {rng.uniform(-0.1, 0.05)};
    }
    c.max_range = rng.uniform(10, 30);
    return c;
}

inline geom::CameraRig random_rig(Rng& rng, int min_cams = 1, int max_cams = 3) {
    geom::CameraRig rig;
    rig.id = "random";
    int n = rng.uniform_int(min_cams, max_cams);
    for (int i = 0; i < n; ++i) {
        geom::RigCamera cam;
        cam.name = "cam" + std::to_string(i);
        cam.intrinsics = random_camera(rng);
        cam.mount_yaw = rng.uniform(0, 2 * M_PI);
        cam.mount_pitch = rng.uniform(0.05, 0.5);
        cam.mount_roll = rng.uniform(-0.1, 0.1);
        cam.pose.rotation =
            geom::camera_mount_rotation(cam.mount_yaw, cam.mount_pitch, cam.mount_roll);
        cam.pose.translation = {rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(1.0, 3.0)};
        rig.cameras.push_back(std::move(cam));
    }
    return rig;
}

inline bev::PolarGridSpec random_grid(Rng& rng) {
    int m = rng.uniform_int(8, 90);
    int n = rng.uniform_int(4, 32);
    double r_min = rng.uniform(0.5, 2.0);
    double r_max = r_min * rng.uniform(6, 30);
    return bev::build_polar_grid(m, n, r_min, r_max);
}

inline Tensor random_tensor(Rng& rng, std::initializer_list<int> dims, double scale = 1.0) {
    Tensor t(dims);
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

}  // namespace pbev::testutil
