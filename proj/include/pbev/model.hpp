#pragma once

#include <map>
#include <string>
#include <vector>

#include "pbev/autodiff.hpp"
#include "pbev/bev_transform.hpp"
#include "pbev/heads.hpp"
#include "pbev/rng.hpp"

namespace pbev::model {

struct BackboneBlock {
    int kernel = 3;
    int stride = 2;
    int repeats = 0;  // extra stride-1 convs after the strided one
    int channels = 8;
};

struct BackboneConfig {
    std::vector<BackboneBlock> blocks;
    // One extra stride-2 block whose output is upsampled and added back to
    // the tap; widens the receptive field without changing the tap stride.
    bool deep_merge = false;

    int tap_stride() const;
    int tap_channels() const;
    void validate() const;  // tap stride must be 8
};

// "k3s2c6,k3s2c12r1,k3s2c12"
BackboneConfig parse_backbone(const std::string& text);
std::string format_backbone(const BackboneConfig& cfg);

struct NetworkSpec {
    BackboneConfig backbone = parse_backbone("k3s2c6,k3s2c12r1,k3s2c12");
    int classes = 4;
    int depth_bins = 32;
    double depth_first_center = 0.5;
    int lift_hidden = 96;
    int neck_channels = 16;
    int head_channels = 16;
    int image_width = 256, image_height = 128;
    bool use_ipm = false;    // flat-world scatter instead of the learned lift
    bool mean_pool = false;  // normalize pooled cells by contribution count
};

struct Param {
    std::string name;
    Tensor value;
    Tensor momentum;
};

class ParamStore {
  public:
    Tensor& add(const std::string& name, Tensor init);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    size_t total_values() const;

  private:
    std::vector<Param> params_;
    std::map<std::string, int> index_;
};

// Fresh graph leaves over the current parameter values, one set per scene
// so parallel scene workers accumulate gradients independently.
struct Leaves {
    std::map<std::string, ad::NodePtr> nodes;
    ad::NodePtr operator()(const std::string& name) const;
};

struct HeadBundle {
    ad::NodePtr bev;  // fused+encoded BEV features (neck_channels, M, N)
    heads::ObstacleHeadOut obstacle;
    heads::FreespaceHeadOut freespace;
    heads::ParkingHeadOut parking;
};

class Network {
  public:
    Network(NetworkSpec spec, const bev::PolarGridSpec& grid, uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Leaves make_leaves() const;

    // images: one (3,H,W) tensor per camera, in rig camera order. The LUT
    // must be the column LUT (learned path) or the IPM pixel LUT.
    HeadBundle forward(const std::vector<Tensor>& images, const bev::BevLut& lut,
                       const bev::PolarGridSpec& grid, const Leaves& leaves) const;

    // Backbone tap for one camera image (shared weights across cameras).
    ad::NodePtr backbone_forward(const ad::NodePtr& image, const Leaves& leaves) const;

  private:
    NetworkSpec spec_;
    ParamStore params_;
    std::vector<double> pool_scale_;  // per-cell 1/count when mean_pool is set
    mutable bool pool_scale_ready_ = false;

    void init_params(const bev::PolarGridSpec& grid, uint64_t seed);
};

struct SgdConfig {
    double lr = 1e-2;
    double momentum = 0.9;
};

// grads: per-parameter accumulated gradients aligned with store order.
void sgd_step(ParamStore& store, const std::vector<Tensor>& grads, const SgdConfig& cfg);

struct CheckpointMeta {
    std::string rig_id;
    uint64_t seed = 0;
    int epoch = 0;
};

void save_checkpoint(const ParamStore& store, const CheckpointMeta& meta,
                     const std::string& path);
// Parameter names and shapes must match the store exactly.
CheckpointMeta load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace pbev::model
