#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "pbev/experiments.hpp"

using namespace pbev;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

config::ExperimentConfig load_config(const CommonOpts& c) {
    config::ExperimentConfig cfg;
    if (!c.config_path.empty()) cfg = config::parse_config_file(c.config_path);
    for (const auto& kv : c.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw config::ConfigError("--set expects key=value, got '" + kv + "'");
        config::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* app, CommonOpts& c) {
    app->add_option("--config", c.config_path, "experiment config file (key = value lines)");
    app->add_option("--set", c.overrides, "override a config key (key=value, repeatable)")
        ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "polarbev: multi-camera polar BEV perception on synthetic scenes\n"
        "Subcommands cover data generation, training with adaptive task-loss\n"
        "balancing, KPI evaluation, LUT benchmarking and the transfer/IPM\n"
        "comparison experiments."};
    app.require_subcommand(1);

    CommonOpts common;

    auto* gen = app.add_subcommand("generate-data", "generate a synthetic scene dataset");
    CommonOpts gen_c;
    add_common(gen, gen_c);
    std::string gen_out;
    gen->add_option("--out", gen_out, "dataset output path (overrides data.path)");

    auto* train = app.add_subcommand(
        "train",
        "train the full pipeline.\n"
        "Two-stage prior tuning recipe: run once with balance.c_* = 1, compare\n"
        "per-task KPIs against single-task runs (scene.active_classes and the\n"
        "priors isolate tasks), then retrain with hand-tuned balance.c_* values\n"
        "(the preset 5/3/1 weighs obstacles over parking over freespace).");
    CommonOpts train_c;
    add_common(train, train_c);
    std::string init_ckpt;
    train->add_option("--init-checkpoint", init_ckpt, "warm-start parameters from a checkpoint");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and emit KPI tables");
    CommonOpts eval_c;
    add_common(eval, eval_c);
    std::string ckpt, drop_cam;
    bool oracle = false, all_scenes = false, allow_mismatch = false;
    double sector_lo = 0, sector_hi = 0;
    eval->add_option("--checkpoint", ckpt, "checkpoint to evaluate");
    eval->add_option("--drop-camera", drop_cam, "zero this camera's input");
    eval->add_flag("--oracle", oracle, "echo ground truth as predictions (upper bound)");
    eval->add_flag("--all-scenes", all_scenes, "evaluate every scene, not just the val tail");
    eval->add_flag("--allow-rig-mismatch", allow_mismatch,
                   "evaluate a checkpoint trained on a different rig");
    eval->add_option("--sector-lo", sector_lo, "angular sector start, degrees");
    eval->add_option("--sector-hi", sector_hi, "angular sector end, degrees");

    auto* bench = app.add_subcommand("bench-lut", "time the LUT path against naive projection");
    CommonOpts bench_c;
    add_common(bench, bench_c);
    int reps = 120;
    bench->add_option("--reps", reps, "timing repetitions per path");

    auto* dump = app.add_subcommand("dump-lut", "emit the BEV index table as text");
    CommonOpts dump_c;
    add_common(dump, dump_c);
    std::string dump_out;
    dump->add_option("--out", dump_out, "write the table here instead of stdout");

    auto* ablate = app.add_subcommand("ablate-ipm",
                                      "paired learned-lift vs flat-world training run");
    CommonOpts ablate_c;
    add_common(ablate, ablate_c);

    auto* transfer = app.add_subcommand("transfer",
                                        "pretrain/finetune/scratch comparison across rigs");
    CommonOpts transfer_c;
    add_common(transfer, transfer_c);
    std::string target_rig = "truck2";
    int ft_count = 120, ft_epochs = 6;
    uint64_t transfer_seed = 1;
    transfer->add_option("--target-rig", target_rig, "rig preset or file for the target");
    transfer->add_option("--finetune-count", ft_count, "target-rig training scenes");
    transfer->add_option("--finetune-epochs", ft_epochs, "epochs for scratch/finetune legs");
    transfer->add_option("--seed", transfer_seed, "seed for the transfer datasets");

    auto* report = app.add_subcommand("balance-report",
                                      "print the per-epoch task weight CSV of a finished run");
    std::string report_dir;
    report->add_option("--run", report_dir, "training output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = load_config(gen_c);
            if (!gen_out.empty()) cfg.data_path = gen_out;
            if (cfg.data_path.empty())
                throw config::ConfigError("generate-data: set data.path or pass --out");
            std::string rig_id =
                std::filesystem::exists(cfg.rig) ? geom::load_rig(cfg.rig).id : cfg.rig;
            auto ds = synth::generate_dataset(cfg.scene, rig_id, cfg.data_count, cfg.data_seed);
            synth::save_dataset(ds, cfg.data_path);
            std::cout << "wrote " << ds.scenes.size() << " scenes to " << cfg.data_path << "\n";
        } else if (train->parsed()) {
            auto cfg = load_config(train_c);
            auto out = init_ckpt.empty() ? exp::run_train(cfg)
                                         : exp::run_train_impl(cfg, init_ckpt);
            if (out.aborted_nonfinite) {
                std::cerr << "training aborted on a non-finite loss; see "
                          << cfg.out_dir + "/diagnostics.json" << "\n";
                return 3;
            }
            std::cout << "trained " << out.epochs_run << " epochs; final combined loss "
                      << out.final_combined_loss << "; checkpoint " << out.checkpoint_last
                      << "\n";
            std::cout << "val mAP " << out.final_val_detection.map << ", freespace success "
                      << out.final_val_freespace.success_rate_pct << "%, parking F1 "
                      << out.final_val_parking.best_f1 << "\n";
        } else if (eval->parsed()) {
            auto cfg = load_config(eval_c);
            exp::EvalOptions opt;
            opt.checkpoint = ckpt;
            opt.drop_camera = drop_cam;
            opt.oracle_echo = oracle;
            opt.allow_rig_mismatch = allow_mismatch;
            opt.use_val_split = !all_scenes;
            if (sector_lo != 0 || sector_hi != 0) {
                metrics::SectorFilter f;
                f.a_lo = geom::wrap_angle_2pi(sector_lo * M_PI / 180.0);
                f.a_hi = geom::wrap_angle_2pi(sector_hi * M_PI / 180.0);
                opt.sector = f;
            }
            auto out = exp::run_eval(cfg, opt);
            std::cout << out.kpis_json;
        } else if (bench->parsed()) {
            auto cfg = load_config(bench_c);
            auto out = exp::run_bench(cfg, reps);
            std::filesystem::create_directories(cfg.out_dir);
            std::ofstream csv(cfg.out_dir + "/bench_lut.csv");
            csv << "component,lut_ms,naive_ms,speedup\n";
            std::cout << "component,lut_ms,naive_ms,speedup\n";
            for (const auto& r : out.rows) {
                csv << r.component << ',' << r.lut_ms << ',' << r.naive_ms << ',' << r.speedup
                    << '\n';
                std::cout << r.component << ',' << r.lut_ms << ',' << r.naive_ms << ','
                          << r.speedup << '\n';
            }
            std::cout << "outputs_identical=" << (out.outputs_identical ? "yes" : "no") << "\n";
            if (!out.outputs_identical) return 3;
        } else if (dump->parsed()) {
            auto cfg = load_config(dump_c);
            auto p = exp::build_pipeline(cfg);
            std::string table = bev::dump_lut(p.lut);
            if (dump_out.empty()) {
                std::cout << table;
            } else {
                std::ofstream f(dump_out);
                f << table;
            }
        } else if (ablate->parsed()) {
            auto cfg = load_config(ablate_c);
            auto out = exp::run_ablate_ipm(cfg);
            std::cout << "mlp_map=" << out.map_mlp << " ipm_map=" << out.map_ipm << "\n";
        } else if (transfer->parsed()) {
            auto cfg = load_config(transfer_c);
            auto out = exp::run_transfer(cfg, target_rig, ft_count, ft_epochs, transfer_seed);
            std::cout << "scratch_map=" << out.map_scratch
                      << " finetuned_map=" << out.map_finetuned
                      << " zero_shot_map=" << out.map_zero_shot << "\n";
        } else if (report->parsed()) {
            std::cout << exp::balance_report(report_dir);
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
