#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pbev/balancer.hpp"
#include "pbev/experiments.hpp"
#include "pbev/kernels.hpp"
#include "test_util.hpp"

using namespace pbev;
namespace fs = std::filesystem;

namespace {

// A small two-fisheye rig keeps these integration tests quick.
std::string tiny_rig_path() {
    static std::string path;
    if (path.empty()) {
        geom::CameraRig rig;
        rig.id = "tiny2";
        for (int i = 0; i < 2; ++i) {
            geom::RigCamera cam;
            cam.name = i ? "rear" : "front";
            cam.intrinsics.model = geom::CameraModel::EquidistantFisheye;
            cam.intrinsics.width = 96;
            cam.intrinsics.height = 64;
            cam.intrinsics.fx = cam.intrinsics.fy = 48.0 / 1.62;
            cam.intrinsics.cx = 48;
            cam.intrinsics.cy = 32;
            cam.intrinsics.max_range = 12;
            cam.mount_yaw = i ? M_PI : 0.0;
            cam.mount_pitch = 0.15;
            cam.pose.rotation = geom::camera_mount_rotation(cam.mount_yaw, 0.15, 0);
            cam.pose.translation = {i ? -1.2 : 1.2, 0.0, 1.9};
            rig.cameras.push_back(cam);
        }
        path = "tiny_rig.txt";
        geom::save_rig(rig, path);
    }
    return path;
}

config::ExperimentConfig tiny_config(const std::string& out_dir) {
    config::ExperimentConfig cfg;
    cfg.rig = tiny_rig_path();
    cfg.grid_m = 24;
    cfg.grid_n = 8;
    cfg.grid_r_min = 1.0;
    cfg.grid_r_max = 12.0;
    cfg.depth_bins = 8;
    cfg.backbone = "k3s2c4,k3s2c6,k3s2c6";
    cfg.lift_hidden = 16;
    cfg.neck_channels = 6;
    cfg.head_channels = 6;
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.lr = 0.005;
    cfg.data_count = 24;
    cfg.val_count = 4;
    cfg.data_seed = 91;
    cfg.seed = 17;
    cfg.scene.min_obstacles = 1;
    cfg.scene.max_obstacles = 3;
    cfg.scene.active_classes = 1;
    cfg.scene.max_distance = 9.0;
    cfg.scene.extent = 12.0;
    cfg.scene.min_parking = 0;
    cfg.scene.max_parking = 1;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("smoke run writes checkpoints, logs and the config echo") {
    auto cfg = tiny_config("test_run_smoke");
    auto out = exp::run_train(cfg);
    CHECK(out.epochs_run == 2);
    CHECK(!out.aborted_nonfinite);
    CHECK(fs::exists(cfg.out_dir + "/ckpt_epoch0.bin"));
    CHECK(fs::exists(cfg.out_dir + "/ckpt_epoch1.bin"));
    CHECK(fs::exists(cfg.out_dir + "/ckpt_last.bin"));
    CHECK(fs::exists(cfg.out_dir + "/epochs.csv"));
    CHECK(fs::exists(cfg.out_dir + "/balance.csv"));
    auto echoed = config::parse_config_file(cfg.out_dir + "/config.txt");
    CHECK(echoed.grid_m == cfg.grid_m);
    CHECK(echoed.data_count == cfg.data_count);

    auto report = exp::balance_report(cfg.out_dir);
    CHECK(report.find("epoch,task,loss_sum,prior,weight") == 0);
    CHECK(report.find("obstacle") != std::string::npos);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("training is bit-reproducible and thread-count independent") {
    auto cfg1 = tiny_config("test_run_rep1");
    cfg1.threads = 1;
    auto a = exp::run_train(cfg1);
    auto cfg2 = tiny_config("test_run_rep2");
    cfg2.threads = 2;
    auto b = exp::run_train(cfg2);
    CHECK(a.final_combined_loss == b.final_combined_loss);

    // Checkpoint files differ only in nothing: byte-compare.
    auto read = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(read(cfg1.out_dir + "/ckpt_last.bin") == read(cfg2.out_dir + "/ckpt_last.bin"));
    fs::remove_all(cfg1.out_dir);
    fs::remove_all(cfg2.out_dir);
}

TEST_CASE("loss strictly decreases on a fixed tiny batch with small lr") {
    auto cfg = tiny_config("test_run_descent");
    cfg.data_count = 4;
    cfg.val_count = 0;
    auto p = exp::build_pipeline(cfg);
    auto ds = exp::resolve_dataset(cfg);
    model::Network net(p.netspec, p.grid, cfg.seed);

    std::vector<std::vector<Tensor>> images;
    std::vector<heads::RadialDistanceMap> rdms;
    for (const auto& s : ds.scenes) {
        auto views = synth::render_views(s, p.rig);
        std::vector<Tensor> t;
        for (const auto& v : views) t.push_back(synth::view_to_tensor(v));
        images.push_back(std::move(t));
        rdms.push_back(heads::rdm_from_polygon(s.freespace, p.grid.M, p.grid.r_max));
    }
    heads::LossConfig lc;
    const auto& params = net.params().all();
    double prev = 1e300;
    for (int step = 0; step < 10; ++step) {
        double total = 0;
        std::vector<Tensor> grads(params.size());
        for (size_t pi = 0; pi < params.size(); ++pi) {
            grads[pi] = params[pi].value;
            grads[pi].fill(0.0);
        }
        for (size_t si = 0; si < ds.scenes.size(); ++si) {
            auto leaves = net.make_leaves();
            auto fwd = net.forward(images[si], p.lut, p.grid, leaves);
            auto obs = heads::obstacle_loss(fwd.obstacle, ds.scenes[si].obstacles, p.grid, lc);
            auto prk = heads::parking_loss(fwd.parking, ds.scenes[si].parking, p.grid, lc);
            auto fsp = heads::freespace_loss(fwd.freespace, rdms[si], p.grid.r_max, lc);
            auto combined = ad::add(ad::add(obs.loss, prk.loss), fsp);
            total += combined->val[0];
            ad::backward(combined);
            for (size_t pi = 0; pi < params.size(); ++pi) {
                const auto& leaf = leaves.nodes.at(params[pi].name);
                if (!leaf->has_grad()) continue;
                for (size_t j = 0; j < grads[pi].size(); ++j)
                    grads[pi][j] += leaf->grad[j] / double(ds.scenes.size());
            }
        }
        total /= double(ds.scenes.size());
        CHECK(total < prev);
        prev = total;
        model::sgd_step(net.params(), grads, {2e-4, 0.9});
    }
}

TEST_CASE("oracle echo evaluates perfectly; untrained model is near zero") {
    auto cfg = tiny_config("test_run_eval");
    cfg.scene.min_parking = 1;
    cfg.scene.max_parking = 2;
    exp::EvalOptions oracle;
    oracle.oracle_echo = true;
    oracle.write_outputs = false;
    auto perfect = exp::run_eval(cfg, oracle);
    CHECK(perfect.detection.map == doctest::Approx(1.0));
    CHECK(perfect.freespace.success_rate_pct == doctest::Approx(100.0));
    CHECK(perfect.freespace.absolute_gap_m == doctest::Approx(0.0));
    CHECK(perfect.parking.best_f1 == doctest::Approx(1.0));
    CHECK(perfect.parking.mean_iou == doctest::Approx(1.0));

    // Untrained network: write a checkpoint straight from initialization.
    auto p = exp::build_pipeline(cfg);
    model::Network net(p.netspec, p.grid, cfg.seed);
    fs::create_directories(cfg.out_dir);
    model::save_checkpoint(net.params(), {p.rig.id, cfg.seed, 0},
                           cfg.out_dir + "/untrained.bin");
    exp::EvalOptions opt;
    opt.checkpoint = cfg.out_dir + "/untrained.bin";
    opt.write_outputs = false;
    auto random_eval = exp::run_eval(cfg, opt);
    CHECK(random_eval.detection.map < 0.05);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("eval runs twice to identical output files") {
    auto cfg = tiny_config("test_run_eval_det");
    exp::EvalOptions opt;
    opt.oracle_echo = true;
    auto a = exp::run_eval(cfg, opt);
    auto read = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    auto kpis1 = read(cfg.out_dir + "/kpis.json");
    auto sectors1 = read(cfg.out_dir + "/sectors.csv");
    auto b = exp::run_eval(cfg, opt);
    CHECK(read(cfg.out_dir + "/kpis.json") == kpis1);
    CHECK(read(cfg.out_dir + "/sectors.csv") == sectors1);
    CHECK(a.kpis_json == b.kpis_json);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("checkpoint/dataset rig mismatch is rejected unless overridden") {
    auto cfg = tiny_config("test_run_mismatch");
    auto p = exp::build_pipeline(cfg);
    model::Network net(p.netspec, p.grid, cfg.seed);
    fs::create_directories(cfg.out_dir);
    std::string ckpt = cfg.out_dir + "/other_rig.bin";
    model::save_checkpoint(net.params(), {"somerig", 1, 0}, ckpt);
    exp::EvalOptions opt;
    opt.checkpoint = ckpt;
    opt.write_outputs = false;
    CHECK_THROWS_AS(exp::run_eval(cfg, opt), std::runtime_error);
    opt.allow_rig_mismatch = true;
    auto out = exp::run_eval(cfg, opt);  // completes
    CHECK(out.detection.per_class.size() == 1);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("bench gate: identical outputs and a measured speedup") {
    auto cfg = tiny_config("test_run_bench");
    auto out = exp::run_bench(cfg, 40);
    CHECK(out.outputs_identical);
    REQUIRE(!out.rows.empty());
    CHECK(out.rows.back().component == "total");
    CHECK(out.total_speedup > 1.0);  // the full 2x bar is enforced at acceptance
}

TEST_SUITE_END();
