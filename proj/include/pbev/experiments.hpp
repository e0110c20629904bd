#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pbev/config.hpp"
#include "pbev/metrics.hpp"
#include "pbev/model.hpp"
#include "pbev/synth.hpp"

namespace pbev::exp {

// Immutable per-run wiring: rig, grid, curves, depth bins and the LUT (the
// column LUT for the learned path or the pixel LUT for the IPM baseline).
struct Pipeline {
    geom::CameraRig rig;
    bev::PolarGridSpec grid;
    std::vector<std::vector<bev::ColumnCurve>> curves;
    std::vector<bev::DepthBinSpec> bins;
    bev::BevLut lut;
    model::NetworkSpec netspec;
};

Pipeline build_pipeline(const config::ExperimentConfig& cfg);

// Dataset resolution: load data.path when it exists, otherwise generate
// (and save to data.path when one is named).
synth::Dataset resolve_dataset(const config::ExperimentConfig& cfg);

struct TrainOutcome {
    std::string checkpoint_last;
    int epochs_run = 0;
    bool aborted_nonfinite = false;
    double final_combined_loss = 0;
    std::vector<double> final_weights;  // balancer weights after the last update
    metrics::DetectionKpis final_val_detection;
    metrics::FreespaceKpis final_val_freespace;
    metrics::ParkingKpis final_val_parking;
};

TrainOutcome run_train(const config::ExperimentConfig& cfg);

struct EvalOptions {
    std::string checkpoint;
    std::string drop_camera;  // zero this camera's image before the forward pass
    std::optional<metrics::SectorFilter> sector;
    bool oracle_echo = false;  // ground truth becomes the prediction
    bool allow_rig_mismatch = false;
    bool use_val_split = true;  // false: evaluate every scene
    bool write_outputs = true;
};

struct EvalOutcome {
    metrics::DetectionKpis detection;
    metrics::FreespaceKpis freespace;
    metrics::ParkingKpis parking;
    std::string kpis_json;  // serialized output (also written to out_dir)
};

EvalOutcome run_eval(const config::ExperimentConfig& cfg, const EvalOptions& opt);

struct BenchRow {
    std::string component;
    double lut_ms = 0, naive_ms = 0, speedup = 0;
};

struct BenchOutcome {
    bool outputs_identical = false;
    std::vector<BenchRow> rows;  // one per camera plus a total row
    double total_speedup = 0;
};

BenchOutcome run_bench(const config::ExperimentConfig& cfg, int repetitions = 120);

// Kernel-level serial vs OpenMP comparison (conv/linear/pooling).
struct KernelBenchRow {
    std::string kernel;
    double serial_ms = 0, parallel_ms = 0, speedup = 0;
    bool bit_identical = false;
};
std::vector<KernelBenchRow> run_bench_kernels(int repetitions = 30);

struct AblationOutcome {
    double map_mlp = 0, map_ipm = 0;
};

// Trains the learned lift and the flat-world baseline on the same scenes
// (the config should place elevated objects) and compares obstacle mAP.
AblationOutcome run_ablate_ipm(const config::ExperimentConfig& cfg);

struct TransferOutcome {
    double map_scratch = 0;     // trained from scratch on the target-rig subset
    double map_finetuned = 0;   // pretrained on the source rig, tuned on the subset
    double map_zero_shot = 0;   // pretrained model evaluated unadapted
};

TransferOutcome run_transfer(const config::ExperimentConfig& pretrain_cfg,
                             const std::string& target_rig, int finetune_count,
                             int finetune_epochs, uint64_t seed);

// Extract the balancer log of a finished run as CSV text.
std::string balance_report(const std::string& out_dir);

}  // namespace pbev::exp
