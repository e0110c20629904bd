#include "pbev/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pbev::model {

namespace ad = pbev::ad;

int BackboneConfig::tap_stride() const {
    int s = 1;
    for (const auto& b : blocks) s *= b.stride;
    return s;
}

int BackboneConfig::tap_channels() const {
    if (blocks.empty()) throw std::invalid_argument("backbone: no blocks");
    return blocks.back().channels;
}

void BackboneConfig::validate() const {
    if (blocks.empty()) throw std::invalid_argument("backbone: no blocks");
    if (tap_stride() != bev::kFeatureStride)
        throw std::invalid_argument("backbone: block strides must multiply to 8, got " +
                                    std::to_string(tap_stride()));
    for (const auto& b : blocks) {
        if (b.kernel < 1 || b.kernel % 2 == 0)
            throw std::invalid_argument("backbone: kernels must be odd");
        if (b.stride < 1 || b.repeats < 0 || b.channels < 1)
            throw std::invalid_argument("backbone: malformed block");
    }
}

BackboneConfig parse_backbone(const std::string& text) {
    BackboneConfig cfg;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        BackboneBlock b;
        b.repeats = 0;
        size_t i = 0;
        auto read_int = [&](char tag) {
            if (i >= tok.size() || tok[i] != tag)
                throw std::invalid_argument("backbone: expected '" + std::string(1, tag) +
                                            "' in block '" + tok + "'");
            ++i;
            size_t j = i;
            while (j < tok.size() && isdigit(tok[j])) ++j;
            if (j == i) throw std::invalid_argument("backbone: missing number in '" + tok + "'");
            int v = std::stoi(tok.substr(i, j - i));
            i = j;
            return v;
        };
        b.kernel = read_int('k');
        b.stride = read_int('s');
        b.channels = read_int('c');
        if (i < tok.size() && tok[i] == 'r') b.repeats = read_int('r');
        if (i != tok.size())
            throw std::invalid_argument("backbone: trailing junk in block '" + tok + "'");
        cfg.blocks.push_back(b);
    }
    cfg.validate();
    return cfg;
}

std::string format_backbone(const BackboneConfig& cfg) {
    std::string out;
    for (size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& b = cfg.blocks[i];
        if (i) out += ",";
        out += "k" + std::to_string(b.kernel) + "s" + std::to_string(b.stride) + "c" +
               std::to_string(b.channels);
        if (b.repeats) out += "r" + std::to_string(b.repeats);
    }
    return out;
}

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("param registered twice: " + name);
    index_[name] = int(params_.size());
    Param p;
    p.name = name;
    p.momentum = init;
    p.momentum.fill(0.0);
    p.value = std::move(init);
    params_.push_back(std::move(p));
    return params_.back().value;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return params_[it->second];
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

ad::NodePtr Leaves::operator()(const std::string& name) const {
    auto it = nodes.find(name);
    if (it == nodes.end()) throw std::invalid_argument("no leaf for param: " + name);
    return it->second;
}

namespace {

Tensor he_normal(Rng& rng, std::initializer_list<int> dims, int fan_in) {
    Tensor t(dims);
    double stddev = std::sqrt(2.0 / double(fan_in));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

constexpr double kObjectnessBias = -2.0;
const double kSigmaBias = std::log(0.5);

}  // namespace

Network::Network(NetworkSpec spec, const bev::PolarGridSpec& grid, uint64_t seed)
    : spec_(std::move(spec)) {
    spec_.backbone.validate();
    if (spec_.image_width % bev::kFeatureStride || spec_.image_height % bev::kFeatureStride)
        throw std::invalid_argument("network: image size must be divisible by 8");
    init_params(grid, seed);
}

void Network::init_params(const bev::PolarGridSpec& grid, uint64_t seed) {
    Rng rng(hash_combine(seed, 0xbbadf00d));
    auto conv = [&](const std::string& name, int out, int in, int k) {
        params_.add(name + ".w", he_normal(rng, {out, in, k, k}, in * k * k));
        params_.add(name + ".b", Tensor::zeros1(out));
    };
    int ch = 3;
    for (size_t bi = 0; bi < spec_.backbone.blocks.size(); ++bi) {
        const auto& blk = spec_.backbone.blocks[bi];
        conv("backbone.b" + std::to_string(bi) + ".conv0", blk.channels, ch, blk.kernel);
        for (int r = 1; r <= blk.repeats; ++r)
            conv("backbone.b" + std::to_string(bi) + ".conv" + std::to_string(r),
                 blk.channels, blk.channels, blk.kernel);
        ch = blk.channels;
    }
    if (spec_.backbone.deep_merge) conv("backbone.deep", ch, ch, 3);

    const int hs = spec_.image_height / bev::kFeatureStride;
    if (!spec_.use_ipm) {
        params_.add("lift.w1", he_normal(rng, {spec_.lift_hidden, ch * hs}, ch * hs));
        params_.add("lift.b1", Tensor::zeros1(spec_.lift_hidden));
        params_.add("lift.w2", he_normal(rng, {spec_.depth_bins * ch, spec_.lift_hidden},
                                         spec_.lift_hidden));
        params_.add("lift.b2", Tensor::zeros1(spec_.depth_bins * ch));
    }

    conv("neck.conv0", spec_.neck_channels, ch, 3);
    conv("neck.conv1", spec_.neck_channels, spec_.neck_channels, 3);

    conv("obs.trunk", spec_.head_channels, spec_.neck_channels, 3);
    conv("obs.cls", 1 + spec_.classes, spec_.head_channels, 1);
    params_.at("obs.cls.b").value[0] = kObjectnessBias;
    conv("obs.pos", 3, spec_.head_channels, 1);
    conv("obs.dim", 3, spec_.head_channels, 1);
    conv("obs.rot", 6, spec_.head_channels, 1);
    for (int p = 0; p < 3; ++p) params_.at("obs.rot.b").value[2 * p + 1] = 1.0;  // cosines
    conv("obs.unc", 5, spec_.head_channels, 1);
    for (int i = 0; i < 5; ++i) params_.at("obs.unc.b").value[i] = kSigmaBias;

    conv("fs.trunk", 8, spec_.neck_channels, 3);
    params_.add("fs.lin.w",
                he_normal(rng, {1 + heads::kFreespaceClasses, 8 * grid.N}, 8 * grid.N));
    params_.add("fs.lin.b", Tensor::zeros1(1 + heads::kFreespaceClasses));

    conv("prk.trunk", spec_.head_channels, spec_.neck_channels, 3);
    conv("prk.conf", heads::kParkingProfiles, spec_.head_channels, 1);
    for (int i = 0; i < heads::kParkingProfiles; ++i)
        params_.at("prk.conf.b").value[i] = kObjectnessBias;
    conv("prk.reg", 6, spec_.head_channels, 1);
    params_.at("prk.reg.b").value[5] = 1.0;  // cos 2theta
}

Leaves Network::make_leaves() const {
    Leaves l;
    for (const auto& p : params_.all()) l.nodes[p.name] = ad::leaf(p.value, true, p.name);
    return l;
}

ad::NodePtr Network::backbone_forward(const ad::NodePtr& image, const Leaves& leaves) const {
    ad::NodePtr x = image;
    for (size_t bi = 0; bi < spec_.backbone.blocks.size(); ++bi) {
        const auto& blk = spec_.backbone.blocks[bi];
        std::string base = "backbone.b" + std::to_string(bi);
        x = ad::relu(ad::conv2d(x, leaves(base + ".conv0.w"), leaves(base + ".conv0.b"),
                                blk.stride, blk.kernel / 2, blk.kernel / 2));
        for (int r = 1; r <= blk.repeats; ++r) {
            std::string cn = base + ".conv" + std::to_string(r);
            x = ad::relu(ad::conv2d(x, leaves(cn + ".w"), leaves(cn + ".b"), 1,
                                    blk.kernel / 2, blk.kernel / 2));
        }
    }
    if (spec_.backbone.deep_merge) {
        auto deep = ad::relu(
            ad::conv2d(x, leaves("backbone.deep.w"), leaves("backbone.deep.b"), 2, 1, 1));
        x = ad::upsample_add(deep, x);
    }
    return x;
}

HeadBundle Network::forward(const std::vector<Tensor>& images, const bev::BevLut& lut,
                            const bev::PolarGridSpec& grid, const Leaves& leaves) const {
    if (images.size() != lut.cameras.size())
        throw std::invalid_argument("forward: image/lut camera count mismatch");
    const int ch = spec_.backbone.tap_channels();

    std::vector<ad::NodePtr> per_cam;
    for (const auto& img : images) {
        auto tap = backbone_forward(ad::leaf(img, false), leaves);
        if (spec_.use_ipm) {
            per_cam.push_back(tap);
        } else {
            auto cols = ad::stack_columns(tap);  // (C*Hs, Ws)
            auto hid = ad::relu(ad::linear(cols, leaves("lift.w1"), leaves("lift.b1")));
            per_cam.push_back(ad::linear(hid, leaves("lift.w2"), leaves("lift.b2")));
        }
    }
    ad::NodePtr pooled = spec_.use_ipm ? ad::scatter_pixels(per_cam, lut, ch)
                                       : ad::scatter_columns(per_cam, lut, ch);
    if (spec_.mean_pool) {
        Tensor scale = Tensor::zeros2(ch, lut.grid_cells);
        for (int cell = 0; cell < lut.grid_cells; ++cell) {
            int count = lut.cell_offsets[cell + 1] - lut.cell_offsets[cell];
            double s = count > 0 ? 1.0 / count : 0.0;
            for (int c = 0; c < ch; ++c) scale[size_t(c) * lut.grid_cells + cell] = s;
        }
        pooled = ad::mul(pooled, ad::constant(scale));
    }
    auto fused = ad::reshape(pooled, {ch, grid.M, grid.N});

    auto circ_conv = [&](const ad::NodePtr& x, const std::string& name, int k) {
        return ad::conv2d(ad::pad_rows_circular(x, k / 2), leaves(name + ".w"),
                          leaves(name + ".b"), 1, 0, k / 2);
    };
    auto bev_feat = ad::relu(circ_conv(fused, "neck.conv0", 3));
    bev_feat = ad::relu(circ_conv(bev_feat, "neck.conv1", 3));

    HeadBundle out;
    out.bev = bev_feat;

    auto obs_trunk = ad::relu(circ_conv(bev_feat, "obs.trunk", 3));
    auto head1x1 = [&](const ad::NodePtr& x, const std::string& name) {
        return ad::conv2d(x, leaves(name + ".w"), leaves(name + ".b"), 1, 0, 0);
    };
    out.obstacle.k = spec_.classes;
    out.obstacle.cls = head1x1(obs_trunk, "obs.cls");
    out.obstacle.pos = head1x1(obs_trunk, "obs.pos");
    out.obstacle.dim = head1x1(obs_trunk, "obs.dim");
    out.obstacle.rot = head1x1(obs_trunk, "obs.rot");
    out.obstacle.unc = head1x1(obs_trunk, "obs.unc");

    auto fs_trunk = ad::relu(circ_conv(bev_feat, "fs.trunk", 3));
    auto fs_cols = ad::stack_columns(ad::transpose_hw(fs_trunk));  // (8*N, M)
    out.freespace.out = ad::linear(fs_cols, leaves("fs.lin.w"), leaves("fs.lin.b"));

    auto prk_trunk = ad::relu(circ_conv(bev_feat, "prk.trunk", 3));
    out.parking.conf = head1x1(prk_trunk, "prk.conf");
    out.parking.reg = head1x1(prk_trunk, "prk.reg");
    return out;
}

void sgd_step(ParamStore& store, const std::vector<Tensor>& grads, const SgdConfig& cfg) {
    auto& params = store.all();
    if (grads.size() != params.size())
        throw std::invalid_argument("sgd_step: gradient count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (grads[i].size() != p.value.size())
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " + p.name);
        for (size_t j = 0; j < p.value.size(); ++j) {
            p.momentum[j] = cfg.momentum * p.momentum[j] + grads[i][j];
            p.value[j] -= cfg.lr * p.momentum[j];
        }
    }
}

namespace {
constexpr char kMagic[8] = {'P', 'B', 'E', 'V', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& f) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace

void save_checkpoint(const ParamStore& store, const CheckpointMeta& meta,
                     const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    write_pod(f, kCkptVersion);
    write_pod(f, meta.seed);
    write_pod(f, int32_t(meta.epoch));
    uint32_t rig_len = uint32_t(meta.rig_id.size());
    write_pod(f, rig_len);
    f.write(meta.rig_id.data(), rig_len);
    write_pod(f, uint32_t(store.all().size()));
    for (const auto& p : store.all()) {
        write_pod(f, uint32_t(p.name.size()));
        f.write(p.name.data(), p.name.size());
        write_pod(f, uint32_t(p.value.ndim()));
        for (int d = 0; d < p.value.ndim(); ++d) write_pod(f, int32_t(p.value.dim(d)));
        f.write(reinterpret_cast<const char*>(p.value.data()),
                std::streamsize(p.value.size() * sizeof(double)));
    }
}

CheckpointMeta load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_pod<uint32_t>(f);
    if (version != kCkptVersion)
        throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(kCkptVersion) + ")");
    CheckpointMeta meta;
    meta.seed = read_pod<uint64_t>(f);
    meta.epoch = read_pod<int32_t>(f);
    uint32_t rig_len = read_pod<uint32_t>(f);
    meta.rig_id.resize(rig_len);
    f.read(meta.rig_id.data(), rig_len);
    uint32_t count = read_pod<uint32_t>(f);
    if (count != store.all().size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_pod<uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        auto& p = store.at(name);
        uint32_t nd = read_pod<uint32_t>(f);
        if (int(nd) != p.value.ndim())
            throw std::runtime_error("checkpoint: rank mismatch for " + name);
        size_t n = 1;
        for (uint32_t d = 0; d < nd; ++d) {
            int32_t dim = read_pod<int32_t>(f);
            if (dim != p.value.dim(int(d)))
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            n *= size_t(dim);
        }
        f.read(reinterpret_cast<char*>(p.value.data()), std::streamsize(n * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated tensor " + name);
        p.momentum.fill(0.0);
    }
    return meta;
}

}  // namespace pbev::model
