#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pbev/bev_transform.hpp"
#include "pbev/tensor.hpp"

namespace pbev::ad {

// Reverse-mode tape. Nodes are created in program order; ids give a valid
// topological order for the backward sweep. Gradients accumulate: a second
// backward() without rebuilding the graph adds on top (callers build a
// fresh graph per training step).
struct Node {
    Tensor val;
    Tensor grad;  // allocated on first backward reaching this node
    bool needs_grad = false;
    long id = 0;
    std::string name;  // set for parameter leaves
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool has_grad() const { return grad.size() == val.size() && val.size() > 0; }
    void ensure_grad() {
        if (!has_grad()) {
            grad = val;
            grad.fill(0.0);
        }
    }
};

using NodePtr = std::shared_ptr<Node>;

NodePtr leaf(Tensor v, bool needs_grad = false, std::string name = "");
inline NodePtr constant(Tensor v) { return leaf(std::move(v), false); }
NodePtr scalar(double x);

// Reverse accumulation from a scalar root. Throws on non-scalar roots.
void backward(const NodePtr& root);

// Elementwise, same shape.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr minimum(const NodePtr& a, const NodePtr& b);
NodePtr maximum(const NodePtr& a, const NodePtr& b);
NodePtr atan2v(const NodePtr& y, const NodePtr& x);

// Elementwise unary.
NodePtr neg(const NodePtr& a);
NodePtr exp_v(const NodePtr& a);
NodePtr log_v(const NodePtr& a);       // caller guards the domain
NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_v(const NodePtr& a);
NodePtr softplus(const NodePtr& a);
NodePtr abs_v(const NodePtr& a);
NodePtr sin_v(const NodePtr& a);
NodePtr cos_v(const NodePtr& a);
NodePtr pow_const(const NodePtr& a, double p);  // a >= 0
NodePtr clamp_v(const NodePtr& a, double lo, double hi);  // zero grad outside

NodePtr add_const(const NodePtr& a, double c);
NodePtr mul_const(const NodePtr& a, double c);

// Elementwise op with caller-supplied forward and derivative (as a function
// of the input value). Escape hatch for one-off terms and test scaffolding.
NodePtr custom_unary(const NodePtr& a, std::function<double(double)> fwd,
                     std::function<double(double)> dfdx);

// Reductions to scalar.
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

// Shape ops.
NodePtr reshape(const NodePtr& a, std::initializer_list<int> dims);
// (C,H,W) -> (c1-c0, H, W)
NodePtr slice_ch(const NodePtr& a, int c0, int c1);
// (C,X) with column picks -> (C, K)
NodePtr gather_cols(const NodePtr& a, std::vector<int> idx);
// (R,K) -> (r1-r0, K)
NodePtr slice_rows(const NodePtr& a, int r0, int r1);
// (R,K) -> (1,K) column-wise sums
NodePtr sum_rows(const NodePtr& a);
// (i) -> scalar pick from a 1-d/flat tensor
NodePtr pick(const NodePtr& a, int i);
// (C,H,W) -> (C*H, W): column features stacked channel-major
NodePtr stack_columns(const NodePtr& a);
// (C,H,W) -> (C,W,H)
NodePtr transpose_hw(const NodePtr& a);
// softmax over dim 0 of (k, K)
NodePtr softmax0(const NodePtr& a);

// NN layers (backed by the OpenMP/serial kernel pair).
NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b);
NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad_h,
               int pad_w);
// Wrap rows (angular axis) before a conv that must be seamless in azimuth.
NodePtr pad_rows_circular(const NodePtr& x, int p);
// coarse (C,h,w) nearest-upsampled 2x and added to fine (C,2h,2w)
NodePtr upsample_add(const NodePtr& coarse, const NodePtr& fine);

// Scatter-sum of per-camera pseudo-BEV features into grid cells via a LUT.
// Each per-camera node is (D*C, W) laid out rows = bin*C + channel. Output
// is (C, cells). Accumulation follows the fixed (camera, slot) order. The
// LUT is captured by reference and must outlive the graph.
NodePtr scatter_columns(const std::vector<NodePtr>& pseudo, const bev::BevLut& lut,
                        int channels);
// IPM variant: per-camera (C, Hs, Ws) image-feature nodes scattered per
// stride-8 pixel through an IPM table.
NodePtr scatter_pixels(const std::vector<NodePtr>& feats, const bev::BevLut& lut,
                       int channels);

// (6,K) rows (sin yaw, cos yaw, sin pitch, cos pitch, sin roll, cos roll),
// pairs normalized internally -> (9,K) row-major rotation entries.
NodePtr rot_from_sincos(const NodePtr& sc);

// Central finite differences against the analytic gradient of a scalar
// graph. Returns the worst relative error; `worst` (optional) receives the
// offending parameter name/element.
double grad_check(const std::function<NodePtr(std::vector<NodePtr>&)>& build,
                  std::vector<Tensor> params, double eps = 1e-6,
                  std::string* worst = nullptr);

}  // namespace pbev::ad
