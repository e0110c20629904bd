#pragma once

#include <stdexcept>
#include <string>

#include "pbev/synth.hpp"

namespace pbev::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value experiment description. Unknown keys are rejected; every
// run echoes its full config into the output directory.
struct ExperimentConfig {
    // rig and grid
    std::string rig = "car2";  // preset name or rig file path
    int grid_m = 72, grid_n = 16;
    double grid_r_min = 1.0, grid_r_max = 16.0;
    int depth_bins = 32;
    double depth_first_center = 0.5;
    // network
    std::string backbone = "k3s2c6,k3s2c12r1,k3s2c12";
    bool deep_merge = false;
    int lift_hidden = 96;
    int neck_channels = 16;
    int head_channels = 16;
    bool use_ipm = false;
    bool mean_pool = false;
    // losses and matching
    double gamma = 2.0;
    double lambda_cls = 1.0, lambda_pos = 5.0, lambda_size = 1.0, lambda_rot = 1.0;
    // balancer priors for (obstacle, parking, freespace)
    double c_obstacle = 1.0, c_parking = 1.0, c_freespace = 1.0;
    // optimizer
    double lr = 0.01, momentum = 0.9;
    int epochs = 10, batch = 8;
    // dataset
    std::string data_path;  // load when set and present; regenerated otherwise
    uint64_t data_seed = 1;
    int data_count = 600;
    int val_count = 100;  // validation tail of the dataset
    // scene generation
    synth::SceneConfig scene;
    // run
    uint64_t seed = 1;
    int threads = 0;  // 0 = library default
    std::string out_dir = "out";
    double eval_conf_floor = 1e-3;

    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Complete, re-parseable echo of every key.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace pbev::config
