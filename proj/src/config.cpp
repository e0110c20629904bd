#include "pbev/config.hpp"

#include <fstream>
#include <sstream>

#include "pbev/model.hpp"

namespace pbev::config {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

double parse_num(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

int parse_int(const std::string& v, const std::string& key) {
    double x = parse_num(v, key);
    if (x != std::floor(x))
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    return int(x);
}

}  // namespace

void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
    if (key == "rig") c.rig = value;
    else if (key == "grid.m") c.grid_m = parse_int(value, key);
    else if (key == "grid.n") c.grid_n = parse_int(value, key);
    else if (key == "grid.r_min") c.grid_r_min = parse_num(value, key);
    else if (key == "grid.r_max") c.grid_r_max = parse_num(value, key);
    else if (key == "depth.bins") c.depth_bins = parse_int(value, key);
    else if (key == "depth.first_center") c.depth_first_center = parse_num(value, key);
    else if (key == "net.backbone") c.backbone = value;
    else if (key == "net.deep_merge") c.deep_merge = parse_bool(value, key);
    else if (key == "net.lift_hidden") c.lift_hidden = parse_int(value, key);
    else if (key == "net.neck_channels") c.neck_channels = parse_int(value, key);
    else if (key == "net.head_channels") c.head_channels = parse_int(value, key);
    else if (key == "net.use_ipm") c.use_ipm = parse_bool(value, key);
    else if (key == "net.mean_pool") c.mean_pool = parse_bool(value, key);
    else if (key == "loss.gamma") c.gamma = parse_num(value, key);
    else if (key == "match.lambda_cls") c.lambda_cls = parse_num(value, key);
    else if (key == "match.lambda_pos") c.lambda_pos = parse_num(value, key);
    else if (key == "match.lambda_size") c.lambda_size = parse_num(value, key);
    else if (key == "match.lambda_rot") c.lambda_rot = parse_num(value, key);
    else if (key == "balance.c_obstacle") c.c_obstacle = parse_num(value, key);
    else if (key == "balance.c_parking") c.c_parking = parse_num(value, key);
    else if (key == "balance.c_freespace") c.c_freespace = parse_num(value, key);
    else if (key == "optim.lr") c.lr = parse_num(value, key);
    else if (key == "optim.momentum") c.momentum = parse_num(value, key);
    else if (key == "optim.epochs") c.epochs = parse_int(value, key);
    else if (key == "optim.batch") c.batch = parse_int(value, key);
    else if (key == "data.path") c.data_path = value;
    else if (key == "data.seed") c.data_seed = uint64_t(parse_num(value, key));
    else if (key == "data.count") c.data_count = parse_int(value, key);
    else if (key == "data.val_count") c.val_count = parse_int(value, key);
    else if (key == "scene.min_obstacles") c.scene.min_obstacles = parse_int(value, key);
    else if (key == "scene.max_obstacles") c.scene.max_obstacles = parse_int(value, key);
    else if (key == "scene.active_classes") c.scene.active_classes = parse_int(value, key);
    else if (key == "scene.min_distance") c.scene.min_distance = parse_num(value, key);
    else if (key == "scene.max_distance") c.scene.max_distance = parse_num(value, key);
    else if (key == "scene.base_elevation_lo") c.scene.base_elevation_lo = parse_num(value, key);
    else if (key == "scene.base_elevation_hi") c.scene.base_elevation_hi = parse_num(value, key);
    else if (key == "scene.min_parking") c.scene.min_parking = parse_int(value, key);
    else if (key == "scene.max_parking") c.scene.max_parking = parse_int(value, key);
    else if (key == "scene.extent") c.scene.extent = parse_num(value, key);
    else if (key == "run.seed") c.seed = uint64_t(parse_num(value, key));
    else if (key == "run.threads") c.threads = parse_int(value, key);
    else if (key == "run.out_dir") c.out_dir = value;
    else if (key == "eval.conf_floor") c.eval_conf_floor = parse_num(value, key);
    else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
        apply_override(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void ExperimentConfig::validate() const {
    if (grid_m < 4 || grid_n < 2) throw ConfigError("config: grid too small");
    if (!(0 < grid_r_min && grid_r_min < grid_r_max))
        throw ConfigError("config: need 0 < grid.r_min < grid.r_max");
    if (depth_bins < 2) throw ConfigError("config: depth.bins must be >= 2");
    if (epochs < 1 || batch < 1) throw ConfigError("config: epochs and batch must be positive");
    if (data_count < 1 || val_count < 0 || val_count >= data_count)
        throw ConfigError("config: need 0 <= data.val_count < data.count");
    if (!(lr > 0)) throw ConfigError("config: optim.lr must be positive");
    if (!(c_obstacle > 0 && c_parking > 0 && c_freespace > 0))
        throw ConfigError("config: balancer priors must be positive");
    if (scene.active_classes < 1 || scene.active_classes > synth::kObstacleClasses)
        throw ConfigError("config: scene.active_classes out of range");
    model::parse_backbone(backbone);  // throws on malformed blocks
}

std::string format_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "rig = " << c.rig << "\n";
    o << "grid.m = " << c.grid_m << "\n";
    o << "grid.n = " << c.grid_n << "\n";
    o << "grid.r_min = " << c.grid_r_min << "\n";
    o << "grid.r_max = " << c.grid_r_max << "\n";
    o << "depth.bins = " << c.depth_bins << "\n";
    o << "depth.first_center = " << c.depth_first_center << "\n";
    o << "net.backbone = " << c.backbone << "\n";
    o << "net.deep_merge = " << (c.deep_merge ? 1 : 0) << "\n";
    o << "net.lift_hidden = " << c.lift_hidden << "\n";
    o << "net.neck_channels = " << c.neck_channels << "\n";
    o << "net.head_channels = " << c.head_channels << "\n";
    o << "net.use_ipm = " << (c.use_ipm ? 1 : 0) << "\n";
    o << "net.mean_pool = " << (c.mean_pool ? 1 : 0) << "\n";
    o << "loss.gamma = " << c.gamma << "\n";
    o << "match.lambda_cls = " << c.lambda_cls << "\n";
    o << "match.lambda_pos = " << c.lambda_pos << "\n";
    o << "match.lambda_size = " << c.lambda_size << "\n";
    o << "match.lambda_rot = " << c.lambda_rot << "\n";
    o << "balance.c_obstacle = " << c.c_obstacle << "\n";
    o << "balance.c_parking = " << c.c_parking << "\n";
    o << "balance.c_freespace = " << c.c_freespace << "\n";
    o << "optim.lr = " << c.lr << "\n";
    o << "optim.momentum = " << c.momentum << "\n";
    o << "optim.epochs = " << c.epochs << "\n";
    o << "optim.batch = " << c.batch << "\n";
    if (!c.data_path.empty()) o << "data.path = " << c.data_path << "\n";
    o << "data.seed = " << c.data_seed << "\n";
    o << "data.count = " << c.data_count << "\n";
    o << "data.val_count = " << c.val_count << "\n";
    o << "scene.min_obstacles = " << c.scene.min_obstacles << "\n";
    o << "scene.max_obstacles = " << c.scene.max_obstacles << "\n";
    o << "scene.active_classes = " << c.scene.active_classes << "\n";
    o << "scene.min_distance = " << c.scene.min_distance << "\n";
    o << "scene.max_distance = " << c.scene.max_distance << "\n";
    o << "scene.base_elevation_lo = " << c.scene.base_elevation_lo << "\n";
    o << "scene.base_elevation_hi = " << c.scene.base_elevation_hi << "\n";
    o << "scene.min_parking = " << c.scene.min_parking << "\n";
    o << "scene.max_parking = " << c.scene.max_parking << "\n";
    o << "scene.extent = " << c.scene.extent << "\n";
    o << "run.seed = " << c.seed << "\n";
    o << "run.threads = " << c.threads << "\n";
    o << "run.out_dir = " << c.out_dir << "\n";
    o << "eval.conf_floor = " << c.eval_conf_floor << "\n";
    return o.str();
}

}  // namespace pbev::config
