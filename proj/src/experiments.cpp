#include "pbev/experiments.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pbev/balancer.hpp"
#include "pbev/kernels.hpp"

namespace pbev::exp {

namespace fs = std::filesystem;
namespace ad = pbev::ad;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.empty() ? 0.0 : v[v.size() / 2];
}

int thread_count(const config::ExperimentConfig& cfg) {
    return cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
}

}  // namespace

Pipeline build_pipeline(const config::ExperimentConfig& cfg) {
    Pipeline p;
    p.rig = fs::exists(cfg.rig) ? geom::load_rig(cfg.rig) : synth::rig_preset(cfg.rig);
    p.grid = bev::build_polar_grid(cfg.grid_m, cfg.grid_n, cfg.grid_r_min, cfg.grid_r_max);
    for (size_t ci = 0; ci < p.rig.cameras.size(); ++ci) {
        const auto& cam = p.rig.cameras[ci];
        p.curves.push_back(fit_column_curves(cam.intrinsics, cam.pose, p.grid, int(ci)));
        double range = std::min(cam.intrinsics.max_range, p.grid.r_max);
        p.bins.push_back(bev::build_depth_bins(cfg.depth_bins, range, cfg.depth_first_center));
    }
    p.netspec.backbone = model::parse_backbone(cfg.backbone);
    p.netspec.backbone.deep_merge = cfg.deep_merge;
    p.netspec.classes = cfg.scene.active_classes;
    p.netspec.depth_bins = cfg.depth_bins;
    p.netspec.depth_first_center = cfg.depth_first_center;
    p.netspec.lift_hidden = cfg.lift_hidden;
    p.netspec.neck_channels = cfg.neck_channels;
    p.netspec.head_channels = cfg.head_channels;
    p.netspec.use_ipm = cfg.use_ipm;
    p.netspec.mean_pool = cfg.mean_pool;
    p.netspec.image_width = p.rig.cameras[0].intrinsics.width;
    p.netspec.image_height = p.rig.cameras[0].intrinsics.height;
    p.lut = cfg.use_ipm ? bev::build_ipm_lut(p.rig, p.grid)
                        : bev::build_bev_lut(p.curves, p.bins, p.grid);
    return p;
}

synth::Dataset resolve_dataset(const config::ExperimentConfig& cfg) {
    std::string rig_id = fs::exists(cfg.rig) ? geom::load_rig(cfg.rig).id : cfg.rig;
    if (!cfg.data_path.empty() && fs::exists(cfg.data_path)) {
        auto ds = synth::load_dataset(cfg.data_path);
        if (ds.rig_id != rig_id)
            throw std::runtime_error("dataset rig '" + ds.rig_id + "' does not match config rig '" +
                                     rig_id + "'");
        return ds;
    }
    auto ds = synth::generate_dataset(cfg.scene, rig_id, cfg.data_count, cfg.data_seed);
    if (!cfg.data_path.empty()) synth::save_dataset(ds, cfg.data_path);
    return ds;
}

namespace {

struct SceneCache {
    std::vector<std::vector<Tensor>> images;           // [scene][camera], (3,H,W)
    std::vector<heads::RadialDistanceMap> rdms;        // ground truth maps
};

SceneCache build_cache(const synth::Dataset& ds, const Pipeline& p, int threads) {
    SceneCache cache;
    const int n = int(ds.scenes.size());
    cache.images.resize(n);
    cache.rdms.resize(n);
#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) {
        auto views = synth::render_views(ds.scenes[i], p.rig);
        std::vector<Tensor> tensors;
        tensors.reserve(views.size());
        for (const auto& v : views) tensors.push_back(synth::view_to_tensor(v));
        cache.images[i] = std::move(tensors);
        cache.rdms[i] =
            heads::rdm_from_polygon(ds.scenes[i].freespace, p.grid.M, p.grid.r_max);
    }
    return cache;
}

heads::LossConfig loss_config(const config::ExperimentConfig& cfg) {
    heads::LossConfig lc;
    lc.gamma = cfg.gamma;
    lc.lambda_cls = cfg.lambda_cls;
    lc.lambda_pos = cfg.lambda_pos;
    lc.lambda_size = cfg.lambda_size;
    lc.lambda_rot = cfg.lambda_rot;
    return lc;
}

struct SceneEval {
    metrics::SceneDetections det;
    heads::RadialDistanceMap pred_rdm;
    metrics::SceneParking park;
};

SceneEval eval_one_scene(const model::Network& net, const Pipeline& p,
                         const synth::Scene& scene, const std::vector<Tensor>& images,
                         const heads::RadialDistanceMap& gt_rdm, double conf_floor,
                         const std::string& drop_camera, bool oracle_echo) {
    SceneEval out;
    out.det.gts = scene.obstacles;
    out.park.gts = scene.parking;
    if (oracle_echo) {
        for (const auto& g : scene.obstacles) out.det.dets.push_back({g, 1.0});
        out.pred_rdm = gt_rdm;
        out.park.dets = scene.parking;
        return out;
    }
    std::vector<Tensor> inputs = images;
    if (!drop_camera.empty()) {
        bool found = false;
        for (size_t ci = 0; ci < p.rig.cameras.size(); ++ci)
            if (p.rig.cameras[ci].name == drop_camera) {
                inputs[ci].fill(0.0);
                found = true;
            }
        if (!found)
            throw std::runtime_error("drop-camera: no camera named '" + drop_camera + "'");
    }
    auto leaves = net.make_leaves();
    auto fwd = net.forward(inputs, p.lut, p.grid, leaves);
    auto preds = heads::decode_obstacles(fwd.obstacle.cls->val, fwd.obstacle.pos->val,
                                         fwd.obstacle.dim->val, fwd.obstacle.rot->val,
                                         fwd.obstacle.unc->val, p.grid);
    for (const auto& pr : preds) {
        int best = 0;
        for (size_t c = 1; c < pr.class_probs.size(); ++c)
            if (pr.class_probs[c] > pr.class_probs[best]) best = int(c);
        double conf = pr.objectness * (pr.class_probs.empty() ? 1.0 : pr.class_probs[best]);
        if (conf < conf_floor) continue;
        heads::GtObstacle obj;
        obj.cls = best;
        obj.cuboid = pr.cuboid;
        out.det.dets.push_back({obj, conf});
    }
    out.pred_rdm = heads::decode_rdm(fwd.freespace.out->val, p.grid.r_max);
    auto park = heads::decode_parking(fwd.parking.conf->val, fwd.parking.reg->val, p.grid);
    for (const auto& ps : park)
        if (ps.existence() >= conf_floor) out.park.dets.push_back(ps);
    return out;
}

struct EvalTables {
    std::vector<metrics::SceneDetections> det;
    std::vector<heads::RadialDistanceMap> pred_rdm, gt_rdm;
    std::vector<metrics::SceneParking> park;
};

EvalTables eval_scenes(const model::Network& net, const Pipeline& p,
                       const synth::Dataset& ds, const SceneCache& cache,
                       const std::vector<int>& indices, double conf_floor,
                       const std::string& drop_camera, bool oracle_echo, int threads) {
    EvalTables t;
    const int n = int(indices.size());
    std::vector<SceneEval> evals(n);
#pragma omp parallel for num_threads(threads) schedule(dynamic, 1) if (threads > 1)
    for (int i = 0; i < n; ++i) {
        if (threads > 1) kernels::set_parallel(false);
        int si = indices[i];
        evals[i] = eval_one_scene(net, p, ds.scenes[si], cache.images[si], cache.rdms[si],
                                  conf_floor, drop_camera, oracle_echo);
    }
    kernels::set_parallel(true);
    for (int i = 0; i < n; ++i) {
        t.det.push_back(std::move(evals[i].det));
        t.pred_rdm.push_back(std::move(evals[i].pred_rdm));
        t.gt_rdm.push_back(cache.rdms[indices[i]]);
        t.park.push_back(std::move(evals[i].park));
    }
    return t;
}

std::vector<std::string> class_names(int k) {
    std::vector<std::string> names;
    for (int c = 0; c < k; ++c) names.push_back(synth::obstacle_class_name(c));
    return names;
}

}  // namespace

TrainOutcome run_train_impl(const config::ExperimentConfig& cfg,
                            const std::string& init_checkpoint) {
    cfg.validate();
    const int threads = thread_count(cfg);
    Pipeline p = build_pipeline(cfg);
    auto ds = resolve_dataset(cfg);
    auto cache = build_cache(ds, p, threads);

    fs::create_directories(cfg.out_dir);
    {
        std::ofstream echo(cfg.out_dir + "/config.txt");
        echo << config::format_config(cfg);
    }

    model::Network net(p.netspec, p.grid, cfg.seed);
    if (!init_checkpoint.empty()) model::load_checkpoint(net.params(), init_checkpoint);

    auto ledger = balance::TaskLossLedger::make({"obstacle", "parking", "freespace"},
                                                {cfg.c_obstacle, cfg.c_parking, cfg.c_freespace});
    heads::LossConfig lc = loss_config(cfg);

    const int train_count = cfg.data_count - cfg.val_count;
    std::vector<int> train_idx(train_count), val_idx;
    for (int i = 0; i < train_count; ++i) train_idx[i] = i;
    for (int i = train_count; i < cfg.data_count; ++i) val_idx.push_back(i);

    std::ofstream epochs_csv(cfg.out_dir + "/epochs.csv");
    epochs_csv << "epoch,loss_obstacle,loss_parking,loss_freespace,w_obstacle,w_parking,"
                  "w_freespace,val_map,val_best_f1,val_radial_err_pct,val_fs_success,"
                  "val_parking_f1,seconds\n";
    std::ofstream balance_csv(cfg.out_dir + "/balance.csv");
    balance_csv << "epoch,task,loss_sum,prior,weight\n";

    TrainOutcome outcome;
    const auto& params = net.params().all();
    const size_t np = params.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = Clock::now();
        std::vector<int> order = train_idx;
        Rng shuffle_rng(hash_combine(cfg.seed, 0x5151 + epoch));
        shuffle_rng.shuffle(order);
        const std::vector<double> weights = ledger.weights;
        double combined_sum = 0;
        long combined_n = 0;
        bool nonfinite = false;
        long nonfinite_scene = -1;

        for (int start = 0; start < train_count && !nonfinite; start += cfg.batch) {
            const int b = std::min(cfg.batch, train_count - start);
            std::vector<std::vector<Tensor>> grads(b);
            std::vector<std::array<double, 3>> losses(b);
            std::vector<char> finite(b, 1);
            const bool outer = threads > 1 && b > 1;
#pragma omp parallel for num_threads(threads) schedule(dynamic, 1) if (outer)
            for (int bi = 0; bi < b; ++bi) {
                kernels::set_parallel(!outer);
                int si = order[start + bi];
                auto leaves = net.make_leaves();
                auto fwd = net.forward(cache.images[si], p.lut, p.grid, leaves);
                auto obs = heads::obstacle_loss(fwd.obstacle, ds.scenes[si].obstacles, p.grid, lc);
                auto prk = heads::parking_loss(fwd.parking, ds.scenes[si].parking, p.grid, lc);
                auto fsp =
                    heads::freespace_loss(fwd.freespace, cache.rdms[si], p.grid.r_max, lc);
                losses[bi] = {obs.loss->val[0], prk.loss->val[0], fsp->val[0]};
                auto combined = ad::add(
                    ad::add(ad::mul_const(obs.loss, weights[0]), ad::mul_const(prk.loss, weights[1])),
                    ad::mul_const(fsp, weights[2]));
                if (!std::isfinite(combined->val[0])) {
                    finite[bi] = 0;
                    continue;
                }
                ad::backward(combined);
                grads[bi].resize(np);
                for (size_t pi = 0; pi < np; ++pi) {
                    auto& leaf = leaves.nodes.at(params[pi].name);
                    if (leaf->has_grad()) grads[bi][pi] = leaf->grad;
                }
            }
            kernels::set_parallel(true);
            for (int bi = 0; bi < b; ++bi) {
                if (!finite[bi]) {
                    nonfinite = true;
                    nonfinite_scene = ds.scenes[order[start + bi]].id;
                    break;
                }
                accumulate(ledger, 0, losses[bi][0]);
                accumulate(ledger, 1, losses[bi][1]);
                accumulate(ledger, 2, losses[bi][2]);
                combined_sum += weights[0] * losses[bi][0] + weights[1] * losses[bi][1] +
                                weights[2] * losses[bi][2];
                ++combined_n;
            }
            if (nonfinite) break;
            // Ordered reduction, then one optimizer step on the batch mean.
            std::vector<Tensor> total(np);
            for (size_t pi = 0; pi < np; ++pi) {
                Tensor g = params[pi].value;
                g.fill(0.0);
                for (int bi = 0; bi < b; ++bi) {
                    if (grads[bi].empty() || grads[bi][pi].size() != g.size()) continue;
                    for (size_t j = 0; j < g.size(); ++j) g[j] += grads[bi][pi][j];
                }
                for (size_t j = 0; j < g.size(); ++j) g[j] /= double(b);
                total[pi] = std::move(g);
            }
            model::sgd_step(net.params(), total, {cfg.lr, cfg.momentum});
        }

        if (nonfinite) {
            json diag{{"error", "non-finite loss"},
                      {"epoch", epoch},
                      {"scene_id", nonfinite_scene}};
            std::ofstream d(cfg.out_dir + "/diagnostics.json");
            d << diag.dump(2) << "\n";
            outcome.aborted_nonfinite = true;
            break;
        }

        for (size_t t = 0; t < ledger.tasks.size(); ++t)
            balance_csv << epoch << ',' << ledger.tasks[t] << ',' << ledger.sums[t] << ','
                        << ledger.priors[t] << ',' << ledger.weights[t] << '\n';

        // Validation KPIs for the epoch log.
        metrics::DetectionKpis det_kpis;
        metrics::FreespaceKpis fs_kpis;
        metrics::ParkingKpis park_kpis;
        if (!val_idx.empty()) {
            auto tables = eval_scenes(net, p, ds, cache, val_idx, cfg.eval_conf_floor, "",
                                      false, threads);
            det_kpis = metrics::detection_kpis(tables.det, p.netspec.classes, {}, {},
                                               std::nullopt, class_names(p.netspec.classes));
            fs_kpis = metrics::freespace_kpis(tables.pred_rdm, tables.gt_rdm);
            park_kpis = metrics::parking_kpis(tables.park);
        }
        double mean_loss[3] = {0, 0, 0};
        long samples = std::max<long>(1, ledger.samples[0]);
        for (int t = 0; t < 3; ++t) mean_loss[t] = ledger.sums[t] / double(samples);
        double best_f1 = 0, rad_err = 0;
        for (const auto& ck : det_kpis.per_class)
            if (ck.has_gts && ck.best_f1 > best_f1) {
                best_f1 = ck.best_f1;
                rad_err = ck.radial_err_pct;
            }
        epochs_csv << epoch << ',' << mean_loss[0] << ',' << mean_loss[1] << ','
                   << mean_loss[2] << ',' << weights[0] << ',' << weights[1] << ','
                   << weights[2] << ',' << det_kpis.map << ',' << best_f1 << ',' << rad_err
                   << ',' << fs_kpis.success_rate_pct << ',' << park_kpis.best_f1 << ','
                   << ms_since(t0) / 1000.0 << '\n';
        epochs_csv.flush();

        outcome.final_combined_loss = combined_n ? combined_sum / combined_n : 0.0;
        outcome.final_val_detection = det_kpis;
        outcome.final_val_freespace = fs_kpis;
        outcome.final_val_parking = park_kpis;
        outcome.epochs_run = epoch + 1;

        balance::update_weights(ledger);
        model::CheckpointMeta meta{p.rig.id, cfg.seed, epoch};
        model::save_checkpoint(net.params(), meta,
                               cfg.out_dir + "/ckpt_epoch" + std::to_string(epoch) + ".bin");
        model::save_checkpoint(net.params(), meta, cfg.out_dir + "/ckpt_last.bin");
    }
    outcome.final_weights = ledger.weights;
    outcome.checkpoint_last = cfg.out_dir + "/ckpt_last.bin";
    return outcome;
}

TrainOutcome run_train(const config::ExperimentConfig& cfg) { return run_train_impl(cfg, ""); }

namespace {

json kpis_to_json(const metrics::DetectionKpis& det, const metrics::FreespaceKpis& fsk,
                  const metrics::ParkingKpis& park) {
    json per_class = json::array();
    for (const auto& c : det.per_class)
        per_class.push_back(json{{"name", c.name},
                                 {"gt_count", c.gt_count},
                                 {"ap", c.ap},
                                 {"best_f1", c.best_f1},
                                 {"best_threshold", c.best_threshold},
                                 {"precision", c.precision},
                                 {"recall", c.recall},
                                 {"radial_err_pct", c.radial_err_pct},
                                 {"azimuth_err_deg", c.azimuth_err_deg},
                                 {"elevation_err_m", c.elevation_err_m},
                                 {"orientation_err_deg", c.orientation_err_deg},
                                 {"shape_err_pct", c.shape_err_pct}});
    return json{
        {"detection",
         json{{"map", det.map}, {"safety_map", det.safety_map}, {"per_class", per_class}}},
        {"freespace", json{{"relative_gap_pct", fsk.relative_gap_pct},
                           {"absolute_gap_m", fsk.absolute_gap_m},
                           {"success_rate_pct", fsk.success_rate_pct},
                           {"smoothness_m", fsk.smoothness_m},
                           {"precision", fsk.precision},
                           {"recall", fsk.recall}}},
        {"parking", json{{"profile_ap", park.profile_ap},
                         {"all_ap", park.all_ap},
                         {"best_f1", park.best_f1},
                         {"mean_iou", park.mean_iou}}}};
}

}  // namespace

EvalOutcome run_eval(const config::ExperimentConfig& cfg, const EvalOptions& opt) {
    cfg.validate();
    const int threads = thread_count(cfg);
    Pipeline p = build_pipeline(cfg);
    auto ds = resolve_dataset(cfg);
    auto cache = build_cache(ds, p, threads);
    model::Network net(p.netspec, p.grid, cfg.seed);
    if (!opt.oracle_echo) {
        if (opt.checkpoint.empty()) throw std::runtime_error("eval: no checkpoint given");
        auto meta = model::load_checkpoint(net.params(), opt.checkpoint);
        if (meta.rig_id != p.rig.id && !opt.allow_rig_mismatch)
            throw std::runtime_error("eval: checkpoint was trained on rig '" + meta.rig_id +
                                     "' but the dataset uses '" + p.rig.id +
                                     "' (pass the mismatch override to evaluate anyway)");
    }
    std::vector<int> indices;
    int start = opt.use_val_split ? cfg.data_count - cfg.val_count : 0;
    for (int i = start; i < cfg.data_count; ++i) indices.push_back(i);

    auto tables = eval_scenes(net, p, ds, cache, indices, cfg.eval_conf_floor,
                              opt.drop_camera, opt.oracle_echo, threads);
    EvalOutcome out;
    out.detection = metrics::detection_kpis(tables.det, p.netspec.classes, {}, {}, opt.sector,
                                            class_names(p.netspec.classes));
    out.freespace = metrics::freespace_kpis(tables.pred_rdm, tables.gt_rdm, opt.sector);
    out.parking = metrics::parking_kpis(tables.park);
    json j = kpis_to_json(out.detection, out.freespace, out.parking);
    out.kpis_json = j.dump(2) + "\n";

    if (opt.write_outputs) {
        fs::create_directories(cfg.out_dir);
        std::ofstream(cfg.out_dir + "/kpis.json") << out.kpis_json;
        std::ofstream pc(cfg.out_dir + "/per_class.csv");
        pc << "class,gt_count,ap,best_f1,precision,recall,radial_err_pct,azimuth_err_deg,"
              "elevation_err_m,orientation_err_deg,shape_err_pct\n";
        for (const auto& c : out.detection.per_class)
            pc << c.name << ',' << c.gt_count << ',' << c.ap << ',' << c.best_f1 << ','
               << c.precision << ',' << c.recall << ',' << c.radial_err_pct << ','
               << c.azimuth_err_deg << ',' << c.elevation_err_m << ','
               << c.orientation_err_deg << ',' << c.shape_err_pct << '\n';
        // Sector table: radial bands x front/full field of view.
        std::ofstream sc(cfg.out_dir + "/sectors.csv");
        sc << "fov_deg,r_lo,r_hi,fs_success_pct,fs_abs_gap_m,bins\n";
        const double r = p.grid.r_max;
        for (double fov : {45.0, 135.0}) {
            for (int band = 0; band < 4; ++band) {
                metrics::SectorFilter f;
                f.a_lo = geom::wrap_angle_2pi(-fov * M_PI / 180.0);
                f.a_hi = fov * M_PI / 180.0;
                f.r_lo = r * band / 4.0;
                f.r_hi = r * (band + 1) / 4.0;
                auto k = metrics::freespace_kpis(tables.pred_rdm, tables.gt_rdm, f);
                sc << 2 * fov << ',' << f.r_lo << ',' << f.r_hi << ',' << k.success_rate_pct
                   << ',' << k.absolute_gap_m << ',' << k.bins << '\n';
            }
        }
    }
    return out;
}

BenchOutcome run_bench(const config::ExperimentConfig& cfg, int repetitions) {
    config::ExperimentConfig c = cfg;
    c.use_ipm = false;
    Pipeline p = build_pipeline(c);
    const int C = p.netspec.backbone.tap_channels();
    Rng rng(hash_combine(cfg.seed, 0xbe9c4));
    std::vector<Tensor> feats;
    for (size_t ci = 0; ci < p.lut.cameras.size(); ++ci) {
        const auto& cl = p.lut.cameras[ci];
        Tensor f = Tensor::zeros3(cl.columns, cl.depth_bins, C);
        for (size_t i = 0; i < f.size(); ++i) f[i] = rng.normal();
        feats.push_back(std::move(f));
    }
    BenchOutcome out;
    // Correctness gate first: all three paths bit-identical.
    Tensor a = bev::scatter_pool(feats, p.lut, C);
    Tensor b = bev::naive_pool(feats, p.curves, p.bins, p.grid, C);
    Tensor g = bev::scatter_pool_gather(feats, p.lut, C);
    out.outputs_identical = true;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i] || a[i] != g[i]) out.outputs_identical = false;

    auto time_path = [&](auto&& fn) {
        std::vector<double> times;
        for (int rep = 0; rep < repetitions; ++rep) {
            auto t0 = Clock::now();
            fn();
            times.push_back(ms_since(t0));
        }
        return median(times);
    };

    double lut_total = 0, naive_total = 0;
    for (size_t ci = 0; ci < p.lut.cameras.size(); ++ci) {
        bev::BevLut single;
        single.grid_cells = p.lut.grid_cells;
        single.cameras.push_back(p.lut.cameras[ci]);
        single.cameras[0].camera = 0;
        single.build_inverse();
        std::vector<Tensor> one{feats[ci]};
        std::vector<std::vector<bev::ColumnCurve>> curves{p.curves[ci]};
        std::vector<bev::DepthBinSpec> bins{p.bins[ci]};
        BenchRow row;
        row.component = p.rig.cameras[ci].name;
        row.lut_ms = time_path([&] { bev::scatter_pool(one, single, C); });
        row.naive_ms = time_path([&] { bev::naive_pool(one, curves, bins, p.grid, C); });
        row.speedup = row.lut_ms > 0 ? row.naive_ms / row.lut_ms : 0;
        lut_total += row.lut_ms;
        naive_total += row.naive_ms;
        out.rows.push_back(row);
    }
    BenchRow total;
    total.component = "total";
    total.lut_ms = time_path([&] { bev::scatter_pool(feats, p.lut, C); });
    total.naive_ms = time_path([&] { bev::naive_pool(feats, p.curves, p.bins, p.grid, C); });
    total.speedup = total.lut_ms > 0 ? total.naive_ms / total.lut_ms : 0;
    out.rows.push_back(total);
    out.total_speedup = total.speedup;
    return out;
}

std::vector<KernelBenchRow> run_bench_kernels(int repetitions) {
    std::vector<KernelBenchRow> rows;
    Rng rng(4242);

    auto bench_pair = [&](const std::string& name, auto&& serial, auto&& parallel,
                          const Tensor& out_s, const Tensor& out_p) {
        KernelBenchRow row;
        row.kernel = name;
        std::vector<double> ts, tp;
        for (int i = 0; i < repetitions; ++i) {
            auto t0 = Clock::now();
            serial();
            ts.push_back(ms_since(t0));
            t0 = Clock::now();
            parallel();
            tp.push_back(ms_since(t0));
        }
        row.serial_ms = median(ts);
        row.parallel_ms = median(tp);
        row.speedup = row.parallel_ms > 0 ? row.serial_ms / row.parallel_ms : 0;
        row.bit_identical = out_s.size() == out_p.size();
        for (size_t i = 0; row.bit_identical && i < out_s.size(); ++i)
            if (out_s[i] != out_p[i]) row.bit_identical = false;
        rows.push_back(row);
    };

    {
        auto d = kernels::ConvDims::make(6, 64, 128, 12, 3, 2, 1, 1);
        Tensor x = Tensor::zeros3(6, 64, 128), w = Tensor::zeros4(12, 6, 3, 3),
               b = Tensor::zeros1(12);
        for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
        Tensor ys = Tensor::zeros3(12, d.ho, d.wo), yp = ys;
        bench_pair(
            "conv2d_forward",
            [&] { kernels::conv2d_forward_serial(x.data(), w.data(), b.data(), ys.data(), d); },
            [&] { kernels::conv2d_forward_omp(x.data(), w.data(), b.data(), yp.data(), d); },
            ys, yp);
        Tensor gy = ys;
        Tensor gxs = Tensor::zeros3(6, 64, 128), gxp = gxs;
        bench_pair(
            "conv2d_backward_input",
            [&] {
                gxs.fill(0);
                kernels::conv2d_backward_input_serial(gy.data(), w.data(), gxs.data(), d);
            },
            [&] {
                gxp.fill(0);
                kernels::conv2d_backward_input_omp(gy.data(), w.data(), gxp.data(), d);
            },
            gxs, gxp);
        Tensor gws = Tensor::zeros4(12, 6, 3, 3), gwp = gws;
        Tensor gbs = Tensor::zeros1(12), gbp = gbs;
        bench_pair(
            "conv2d_backward_params",
            [&] {
                gws.fill(0);
                gbs.fill(0);
                kernels::conv2d_backward_params_serial(gy.data(), x.data(), gws.data(),
                                                       gbs.data(), d);
            },
            [&] {
                gwp.fill(0);
                gbp.fill(0);
                kernels::conv2d_backward_params_omp(gy.data(), x.data(), gwp.data(),
                                                    gbp.data(), d);
            },
            gws, gwp);
    }
    {
        const int in = 192, out_dim = 192, cols = 64;
        Tensor x = Tensor::zeros2(in, cols), w = Tensor::zeros2(out_dim, in),
               b = Tensor::zeros1(out_dim);
        for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
        Tensor ys = Tensor::zeros2(out_dim, cols), yp = ys;
        bench_pair(
            "linear_forward",
            [&] {
                kernels::linear_forward_serial(x.data(), w.data(), b.data(), ys.data(), in,
                                               out_dim, cols);
            },
            [&] {
                kernels::linear_forward_omp(x.data(), w.data(), b.data(), yp.data(), in,
                                            out_dim, cols);
            },
            ys, yp);
    }
    {
        // Pooling: sequential scatter vs inverted-index gather.
        auto grid = bev::build_polar_grid(72, 16, 1.0, 16.0);
        auto rig = synth::rig_preset("car2");
        std::vector<std::vector<bev::ColumnCurve>> curves;
        std::vector<bev::DepthBinSpec> bins;
        for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
            curves.push_back(
                fit_column_curves(rig.cameras[ci].intrinsics, rig.cameras[ci].pose, grid, int(ci)));
            bins.push_back(bev::build_depth_bins(16, 16.0, 0.5));
        }
        auto lut = bev::build_bev_lut(curves, bins, grid);
        const int C = 12;
        std::vector<Tensor> feats;
        for (const auto& cl : lut.cameras) {
            Tensor f = Tensor::zeros3(cl.columns, cl.depth_bins, C);
            for (size_t i = 0; i < f.size(); ++i) f[i] = rng.normal();
            feats.push_back(std::move(f));
        }
        Tensor ys, yp;
        bench_pair(
            "scatter_pool", [&] { ys = bev::scatter_pool(feats, lut, C); },
            [&] { yp = bev::scatter_pool_gather(feats, lut, C); }, ys, yp);
    }
    return rows;
}

AblationOutcome run_ablate_ipm(const config::ExperimentConfig& cfg) {
    AblationOutcome out;
    config::ExperimentConfig mlp_cfg = cfg;
    mlp_cfg.use_ipm = false;
    mlp_cfg.out_dir = cfg.out_dir + "/mlp";
    config::ExperimentConfig ipm_cfg = cfg;
    ipm_cfg.use_ipm = true;
    ipm_cfg.out_dir = cfg.out_dir + "/ipm";

    auto mlp = run_train(mlp_cfg);
    auto ipm = run_train(ipm_cfg);
    out.map_mlp = mlp.final_val_detection.map;
    out.map_ipm = ipm.final_val_detection.map;
    std::ofstream csv(cfg.out_dir + "/ablation.csv");
    csv << "method,map\nmlp," << out.map_mlp << "\nipm," << out.map_ipm << "\n";
    return out;
}

TransferOutcome run_transfer(const config::ExperimentConfig& pretrain_cfg,
                             const std::string& target_rig, int finetune_count,
                             int finetune_epochs, uint64_t seed) {
    TransferOutcome out;
    std::string pre_ckpt = pretrain_cfg.out_dir + "/ckpt_last.bin";
    if (!fs::exists(pre_ckpt)) {
        run_train(pretrain_cfg);
    }

    config::ExperimentConfig target = pretrain_cfg;
    target.rig = target_rig;
    target.data_seed = hash_combine(seed, 0x7a36);
    target.data_count = finetune_count + pretrain_cfg.val_count;
    target.val_count = pretrain_cfg.val_count;
    target.epochs = finetune_epochs;
    target.data_path.clear();

    config::ExperimentConfig scratch = target;
    scratch.seed = hash_combine(seed, 1);
    scratch.out_dir = pretrain_cfg.out_dir + "/scratch";
    auto scratch_run = run_train(scratch);
    out.map_scratch = scratch_run.final_val_detection.map;

    config::ExperimentConfig tuned = target;
    tuned.seed = hash_combine(seed, 2);
    tuned.out_dir = pretrain_cfg.out_dir + "/finetune";
    auto tuned_run = run_train_impl(tuned, pre_ckpt);
    out.map_finetuned = tuned_run.final_val_detection.map;

    config::ExperimentConfig zero = target;
    zero.seed = hash_combine(seed, 3);
    zero.out_dir = pretrain_cfg.out_dir + "/zero_shot";
    EvalOptions opt;
    opt.checkpoint = pre_ckpt;
    opt.allow_rig_mismatch = true;
    opt.write_outputs = false;
    auto zev = run_eval(zero, opt);
    out.map_zero_shot = zev.detection.map;

    std::ofstream csv(pretrain_cfg.out_dir + "/transfer.csv");
    csv << "model,pretrained,finetuned,map\n";
    csv << "scratch,no,yes," << out.map_scratch << "\n";
    csv << "zero_shot,yes,no," << out.map_zero_shot << "\n";
    csv << "finetuned,yes,yes," << out.map_finetuned << "\n";
    return out;
}

std::string balance_report(const std::string& out_dir) {
    std::ifstream f(out_dir + "/balance.csv");
    if (!f) throw std::runtime_error("no balance.csv under " + out_dir +
                                     " (run training first)");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace pbev::exp
