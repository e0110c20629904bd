#include "pbev/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "pbev/kernels.hpp"

namespace pbev::ad {

namespace {

std::atomic<long> g_next_id{1};

NodePtr make_node(Tensor val, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    for (const auto& p : n->parents)
        if (p->needs_grad) {
            n->needs_grad = true;
            break;
        }
    return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a->val.shape_str() + " vs " + b->val.shape_str());
}

}  // namespace

NodePtr leaf(Tensor v, bool needs_grad, std::string name) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->needs_grad = needs_grad;
    n->name = std::move(name);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

NodePtr scalar(double x) { return leaf(Tensor::scalar(x), false); }

void backward(const NodePtr& root) {
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    // Collect the reachable subgraph, then sweep in descending id order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    // Interior grads are scratch for this pass; leaf grads accumulate across
    // passes (callers rebuild the graph to reset).
    for (Node* n : order) {
        bool interior = bool(n->backward_fn);
        if (interior && n->has_grad())
            n->grad.fill(0.0);
        else
            n->ensure_grad();
    }
    root->grad[0] += 1.0;
    for (Node* n : order)
        if (n->backward_fn) n->backward_fn(*n);
}

// ---- elementwise binary ----

namespace {

template <typename FwdFn, typename BwdFn>
NodePtr binary_op(const NodePtr& a, const NodePtr& b, const char* name, FwdFn fwd, BwdFn bwd) {
    check_same_shape(a, b, name);
    Tensor out = a->val;
    const size_t n = out.size();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(a->val[i], b->val[i]);
    return make_node(std::move(out), {a, b}, [bwd](Node& self) {
        auto& a = self.parents[0];
        auto& b = self.parents[1];
        const size_t n = self.val.size();
        if (a->needs_grad) a->ensure_grad();
        if (b->needs_grad) b->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            double ga = 0, gb = 0;
            bwd(a->val[i], b->val[i], self.val[i], self.grad[i], ga, gb);
            if (a->needs_grad) a->grad[i] += ga;
            if (b->needs_grad) b->grad[i] += gb;
        }
    });
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double, double g, double& ga, double& gb) {
                         ga = g;
                         gb = g;
                     });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double, double g, double& ga, double& gb) {
                         ga = g;
                         gb = -g;
                     });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double, double g, double& ga, double& gb) {
                         ga = g * y;
                         gb = g * x;
                     });
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                     [](double x, double y, double, double g, double& ga, double& gb) {
                         ga = g / y;
                         gb = -g * x / (y * y);
                     });
}

NodePtr minimum(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "minimum", [](double x, double y) { return x < y ? x : y; },
                     [](double x, double y, double, double g, double& ga, double& gb) {
                         if (x <= y)
                             ga = g;
                         else
                             gb = g;
                     });
}

NodePtr maximum(const NodePtr& a, const NodePtr& b) {
    return binary_op(a, b, "maximum", [](double x, double y) { return x > y ? x : y; },
                     [](double x, double y, double, double g, double& ga, double& gb) {
                         if (x >= y)
                             ga = g;
                         else
                             gb = g;
                     });
}

NodePtr atan2v(const NodePtr& y, const NodePtr& x) {
    return binary_op(y, x, "atan2", [](double yy, double xx) { return std::atan2(yy, xx); },
                     [](double yy, double xx, double, double g, double& gy, double& gx) {
                         double r2 = xx * xx + yy * yy + 1e-30;
                         gy = g * xx / r2;
                         gx = -g * yy / r2;
                     });
}

// ---- elementwise unary ----

namespace {

template <typename FwdFn, typename BwdFn>
NodePtr unary_op(const NodePtr& a, FwdFn fwd, BwdFn bwd) {
    Tensor out = a->val;
    const size_t n = out.size();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(a->val[i]);
    return make_node(std::move(out), {a}, [bwd](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const size_t n = self.val.size();
        for (size_t i = 0; i < n; ++i)
            a->grad[i] += self.grad[i] * bwd(a->val[i], self.val[i]);
    });
}

}  // namespace

NodePtr neg(const NodePtr& a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

NodePtr exp_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

NodePtr log_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

NodePtr relu(const NodePtr& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

NodePtr sigmoid(const NodePtr& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

NodePtr tanh_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

NodePtr softplus(const NodePtr& a) {
    // log(1+e^x) with the usual large-x guard
    return unary_op(a,
                    [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
                    [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

NodePtr abs_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

NodePtr sin_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::sin(x); },
                    [](double x, double) { return std::cos(x); });
}

NodePtr cos_v(const NodePtr& a) {
    return unary_op(a, [](double x) { return std::cos(x); },
                    [](double x, double) { return -std::sin(x); });
}

NodePtr pow_const(const NodePtr& a, double p) {
    return unary_op(a, [p](double x) { return std::pow(x, p); },
                    [p](double x, double) { return x == 0.0 ? 0.0 : p * std::pow(x, p - 1); });
}

NodePtr clamp_v(const NodePtr& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

NodePtr add_const(const NodePtr& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

NodePtr mul_const(const NodePtr& a, double c) {
    return unary_op(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

NodePtr custom_unary(const NodePtr& a, std::function<double(double)> fwd,
                     std::function<double(double)> dfdx) {
    return unary_op(a, [f = std::move(fwd)](double x) { return f(x); },
                    [d = std::move(dfdx)](double x, double) { return d(x); });
}

// ---- reductions ----

NodePtr sum_all(const NodePtr& a) {
    double s = 0;
    for (size_t i = 0; i < a->val.size(); ++i) s += a->val[i];
    return make_node(Tensor::scalar(s), {a}, [](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += self.grad[0];
    });
}

NodePtr mean_all(const NodePtr& a) { return mul_const(sum_all(a), 1.0 / double(a->val.size())); }

// ---- shape ops ----

NodePtr reshape(const NodePtr& a, std::initializer_list<int> dims) {
    Tensor out = a->val.reshaped(dims);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += self.grad[i];
    });
}

NodePtr slice_ch(const NodePtr& a, int c0, int c1) {
    if (a->val.ndim() != 3 || c0 < 0 || c1 > a->val.dim(0) || c0 >= c1)
        throw std::invalid_argument("slice_ch: bad range");
    const int h = a->val.dim(1), w = a->val.dim(2);
    const size_t plane = size_t(h) * w;
    Tensor out = Tensor::zeros3(c1 - c0, h, w);
    for (int c = c0; c < c1; ++c)
        for (size_t i = 0; i < plane; ++i) out[(c - c0) * plane + i] = a->val[c * plane + i];
    return make_node(std::move(out), {a}, [c0, plane](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int cs = self.val.dim(0);
        for (int c = 0; c < cs; ++c)
            for (size_t i = 0; i < plane; ++i)
                a->grad[(c + c0) * plane + i] += self.grad[c * plane + i];
    });
}

NodePtr gather_cols(const NodePtr& a, std::vector<int> idx) {
    if (a->val.ndim() != 2) throw std::invalid_argument("gather_cols: need 2d input");
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    const int k = int(idx.size());
    if (k == 0) throw std::invalid_argument("gather_cols: empty index list");
    Tensor out = Tensor::zeros2(rows, k);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < k; ++j) out.at2(r, j) = a->val.at2(r, idx[j]);
    return make_node(std::move(out), {a}, [idx = std::move(idx), cols](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int rows = self.val.dim(0), k = self.val.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < k; ++j)
                a->grad[size_t(r) * cols + idx[j]] += self.grad.at2(r, j);
    });
}

NodePtr slice_rows(const NodePtr& a, int r0, int r1) {
    if (a->val.ndim() != 2 || r0 < 0 || r1 > a->val.dim(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    const int cols = a->val.dim(1);
    Tensor out = Tensor::zeros2(r1 - r0, cols);
    for (int r = r0; r < r1; ++r)
        for (int c = 0; c < cols; ++c) out.at2(r - r0, c) = a->val.at2(r, c);
    return make_node(std::move(out), {a}, [r0, cols](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int rs = self.val.dim(0);
        for (int r = 0; r < rs; ++r)
            for (int c = 0; c < cols; ++c)
                a->grad[size_t(r + r0) * cols + c] += self.grad.at2(r, c);
    });
}

NodePtr sum_rows(const NodePtr& a) {
    if (a->val.ndim() != 2) throw std::invalid_argument("sum_rows: need 2d input");
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    Tensor out = Tensor::zeros2(1, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.at2(0, c) += a->val.at2(r, c);
    return make_node(std::move(out), {a}, [rows, cols](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) a->grad[size_t(r) * cols + c] += self.grad.at2(0, c);
    });
}

NodePtr pick(const NodePtr& a, int i) {
    if (i < 0 || size_t(i) >= a->val.size()) throw std::invalid_argument("pick: out of range");
    return make_node(Tensor::scalar(a->val[i]), {a}, [i](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        a->grad[i] += self.grad[0];
    });
}

NodePtr stack_columns(const NodePtr& a) {
    if (a->val.ndim() != 3) throw std::invalid_argument("stack_columns: need (C,H,W)");
    const int c = a->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
    Tensor out = Tensor::zeros2(c * h, w);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at2(ci * h + y, x) = a->val.at3(ci, y, x);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int c = a->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    a->grad[(size_t(ci) * h + y) * w + x] += self.grad.at2(ci * h + y, x);
    });
}

NodePtr transpose_hw(const NodePtr& a) {
    if (a->val.ndim() != 3) throw std::invalid_argument("transpose_hw: need (C,H,W)");
    const int c = a->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
    Tensor out = Tensor::zeros3(c, w, h);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at3(ci, x, y) = a->val.at3(ci, y, x);
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int c = a->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    a->grad[(size_t(ci) * h + y) * w + x] += self.grad.at3(ci, x, y);
    });
}

NodePtr softmax0(const NodePtr& a) {
    if (a->val.ndim() != 2) throw std::invalid_argument("softmax0: need 2d input");
    const int k = a->val.dim(0), cols = a->val.dim(1);
    Tensor out = a->val;
    for (int c = 0; c < cols; ++c) {
        double mx = -1e300;
        for (int r = 0; r < k; ++r) mx = std::max(mx, a->val.at2(r, c));
        double z = 0;
        for (int r = 0; r < k; ++r) z += std::exp(a->val.at2(r, c) - mx);
        for (int r = 0; r < k; ++r) out.at2(r, c) = std::exp(a->val.at2(r, c) - mx) / z;
    }
    return make_node(std::move(out), {a}, [](Node& self) {
        auto& a = self.parents[0];
        if (!a->needs_grad) return;
        a->ensure_grad();
        const int k = self.val.dim(0), cols = self.val.dim(1);
        for (int c = 0; c < cols; ++c) {
            double dot = 0;
            for (int r = 0; r < k; ++r) dot += self.grad.at2(r, c) * self.val.at2(r, c);
            for (int r = 0; r < k; ++r)
                a->grad[size_t(r) * cols + c] +=
                    self.val.at2(r, c) * (self.grad.at2(r, c) - dot);
        }
    });
}

// ---- layers ----

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    if (x->val.ndim() != 2 || w->val.ndim() != 2 || b->val.ndim() != 1)
        throw std::invalid_argument("linear: bad ranks");
    const int in = x->val.dim(0), cols = x->val.dim(1), out_dim = w->val.dim(0);
    if (w->val.dim(1) != in || b->val.dim(0) != out_dim)
        throw std::invalid_argument("linear: shape mismatch");
    Tensor out = Tensor::zeros2(out_dim, cols);
    kernels::linear_forward(x->val.data(), w->val.data(), b->val.data(), out.data(), in,
                            out_dim, cols);
    return make_node(std::move(out), {x, w, b}, [in, out_dim, cols](Node& self) {
        auto& x = self.parents[0];
        auto& w = self.parents[1];
        auto& b = self.parents[2];
        if (x->needs_grad) {
            x->ensure_grad();
            kernels::linear_backward_input(self.grad.data(), w->val.data(), x->grad.data(),
                                           in, out_dim, cols);
        }
        if (w->needs_grad || b->needs_grad) {
            w->ensure_grad();
            b->ensure_grad();
            kernels::linear_backward_params(self.grad.data(), x->val.data(), w->grad.data(),
                                            b->grad.data(), in, out_dim, cols);
        }
    });
}

NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad_h,
               int pad_w) {
    if (x->val.ndim() != 3 || w->val.ndim() != 4 || b->val.ndim() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    if (w->val.dim(1) != x->val.dim(0) || w->val.dim(2) != w->val.dim(3) ||
        b->val.dim(0) != w->val.dim(0))
        throw std::invalid_argument("conv2d: shape mismatch");
    auto d = kernels::ConvDims::make(x->val.dim(0), x->val.dim(1), x->val.dim(2),
                                     w->val.dim(0), w->val.dim(2), stride, pad_h, pad_w);
    Tensor out = Tensor::zeros3(d.co, d.ho, d.wo);
    kernels::conv2d_forward(x->val.data(), w->val.data(), b->val.data(), out.data(), d);
    return make_node(std::move(out), {x, w, b}, [d](Node& self) {
        auto& x = self.parents[0];
        auto& w = self.parents[1];
        auto& b = self.parents[2];
        if (x->needs_grad) {
            x->ensure_grad();
            kernels::conv2d_backward_input(self.grad.data(), w->val.data(), x->grad.data(), d);
        }
        if (w->needs_grad || b->needs_grad) {
            w->ensure_grad();
            b->ensure_grad();
            kernels::conv2d_backward_params(self.grad.data(), x->val.data(), w->grad.data(),
                                            b->grad.data(), d);
        }
    });
}

NodePtr pad_rows_circular(const NodePtr& x, int p) {
    if (x->val.ndim() != 3) throw std::invalid_argument("pad_rows_circular: need (C,H,W)");
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    if (p >= h) throw std::invalid_argument("pad_rows_circular: pad too large");
    Tensor out = Tensor::zeros3(c, h + 2 * p, w);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h + 2 * p; ++y) {
            int sy = ((y - p) % h + h) % h;
            for (int xx = 0; xx < w; ++xx) out.at3(ci, y, xx) = x->val.at3(ci, sy, xx);
        }
    return make_node(std::move(out), {x}, [p](Node& self) {
        auto& x = self.parents[0];
        if (!x->needs_grad) return;
        x->ensure_grad();
        const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
        // Gather per source row: each row appears at its own offset plus up
        // to one wrapped copy at each end.
        for (int ci = 0; ci < c; ++ci)
            for (int sy = 0; sy < h; ++sy)
                for (int xx = 0; xx < w; ++xx) {
                    double acc = 0;
                    for (int y = sy + p - h; y < h + 2 * p; y += h) {
                        if (y < 0) continue;
                        acc += self.grad.at3(ci, y, xx);
                    }
                    x->grad[(size_t(ci) * h + sy) * w + xx] += acc;
                }
    });
}

NodePtr upsample_add(const NodePtr& coarse, const NodePtr& fine) {
    if (coarse->val.ndim() != 3 || fine->val.ndim() != 3)
        throw std::invalid_argument("upsample_add: need (C,h,w) inputs");
    const int c = coarse->val.dim(0), h = coarse->val.dim(1), w = coarse->val.dim(2);
    if (fine->val.dim(0) != c || fine->val.dim(1) != 2 * h || fine->val.dim(2) != 2 * w)
        throw std::invalid_argument("upsample_add: fine must be exactly 2x coarse");
    Tensor out = fine->val;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                out.at3(ci, y, x) += coarse->val.at3(ci, y / 2, x / 2);
    return make_node(std::move(out), {coarse, fine}, [](Node& self) {
        auto& coarse = self.parents[0];
        auto& fine = self.parents[1];
        const int c = coarse->val.dim(0), h = coarse->val.dim(1), w = coarse->val.dim(2);
        if (fine->needs_grad) {
            fine->ensure_grad();
            for (size_t i = 0; i < fine->val.size(); ++i) fine->grad[i] += self.grad[i];
        }
        if (coarse->needs_grad) {
            coarse->ensure_grad();
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double acc = self.grad.at3(ci, 2 * y, 2 * x) +
                                     self.grad.at3(ci, 2 * y, 2 * x + 1) +
                                     self.grad.at3(ci, 2 * y + 1, 2 * x) +
                                     self.grad.at3(ci, 2 * y + 1, 2 * x + 1);
                        coarse->grad[(size_t(ci) * h + y) * w + x] += acc;
                    }
        }
    });
}

namespace {

// Shared backward for both scatter flavors: pure gather from the pooled
// gradient back to each source slot.
void scatter_backward(Node& self, const bev::BevLut& lut, int channels, bool column_layout) {
    const int cells = lut.grid_cells;
    for (size_t ci = 0; ci < lut.cameras.size(); ++ci) {
        auto& src = self.parents[ci];
        if (!src->needs_grad) continue;
        src->ensure_grad();
        const auto& cl = lut.cameras[ci];
        for (size_t slot = 0; slot < cl.cells.size(); ++slot) {
            int32_t cell = cl.cells[slot];
            if (cell == bev::kOffGrid) continue;
            int major = int(slot) / cl.depth_bins;  // column (or feature col)
            int minor = int(slot) % cl.depth_bins;  // depth bin (or feature row)
            for (int ch = 0; ch < channels; ++ch) {
                double g = self.grad[size_t(ch) * cells + cell];
                if (column_layout)
                    src->grad[(size_t(minor) * channels + ch) * cl.columns + major] += g;
                else
                    src->grad[(size_t(ch) * cl.depth_bins + minor) * cl.columns + major] += g;
            }
        }
    }
}

}  // namespace

NodePtr scatter_columns(const std::vector<NodePtr>& pseudo, const bev::BevLut& lut,
                        int channels) {
    if (pseudo.size() != lut.cameras.size())
        throw std::invalid_argument("scatter_columns: camera count mismatch");
    for (size_t i = 0; i < pseudo.size(); ++i) {
        const auto& cl = lut.cameras[i];
        if (pseudo[i]->val.ndim() != 2 || pseudo[i]->val.dim(0) != cl.depth_bins * channels ||
            pseudo[i]->val.dim(1) != cl.columns)
            throw std::invalid_argument("scatter_columns: pseudo feature shape mismatch");
    }
    const int cells = lut.grid_cells;
    Tensor out = Tensor::zeros2(channels, cells);
    for (size_t ci = 0; ci < lut.cameras.size(); ++ci) {
        const auto& cl = lut.cameras[ci];
        const double* f = pseudo[ci]->val.data();
        for (size_t slot = 0; slot < cl.cells.size(); ++slot) {
            int32_t cell = cl.cells[slot];
            if (cell == bev::kOffGrid) continue;
            int col = int(slot) / cl.depth_bins;
            int bin = int(slot) % cl.depth_bins;
            for (int ch = 0; ch < channels; ++ch)
                out[size_t(ch) * cells + cell] +=
                    f[(size_t(bin) * channels + ch) * cl.columns + col];
        }
    }
    std::vector<NodePtr> parents(pseudo.begin(), pseudo.end());
    return make_node(std::move(out), std::move(parents), [&lut, channels](Node& self) {
        scatter_backward(self, lut, channels, /*column_layout=*/true);
    });
}

NodePtr scatter_pixels(const std::vector<NodePtr>& feats, const bev::BevLut& lut,
                       int channels) {
    if (feats.size() != lut.cameras.size())
        throw std::invalid_argument("scatter_pixels: camera count mismatch");
    for (size_t i = 0; i < feats.size(); ++i) {
        const auto& cl = lut.cameras[i];
        if (feats[i]->val.ndim() != 3 || feats[i]->val.dim(0) != channels ||
            feats[i]->val.dim(1) != cl.depth_bins || feats[i]->val.dim(2) != cl.columns)
            throw std::invalid_argument("scatter_pixels: feature shape mismatch");
    }
    const int cells = lut.grid_cells;
    Tensor out = Tensor::zeros2(channels, cells);
    for (size_t ci = 0; ci < lut.cameras.size(); ++ci) {
        const auto& cl = lut.cameras[ci];
        const double* f = feats[ci]->val.data();
        for (size_t slot = 0; slot < cl.cells.size(); ++slot) {
            int32_t cell = cl.cells[slot];
            if (cell == bev::kOffGrid) continue;
            int col = int(slot) / cl.depth_bins;  // feature x
            int row = int(slot) % cl.depth_bins;  // feature y
            for (int ch = 0; ch < channels; ++ch)
                out[size_t(ch) * cells + cell] +=
                    f[(size_t(ch) * cl.depth_bins + row) * cl.columns + col];
        }
    }
    std::vector<NodePtr> parents(feats.begin(), feats.end());
    return make_node(std::move(out), std::move(parents), [&lut, channels](Node& self) {
        scatter_backward(self, lut, channels, /*column_layout=*/false);
    });
}

NodePtr rot_from_sincos(const NodePtr& sc) {
    if (sc->val.ndim() != 2 || sc->val.dim(0) != 6)
        throw std::invalid_argument("rot_from_sincos: need (6,K)");
    const int k = sc->val.dim(1);
    Tensor out = Tensor::zeros2(9, k);
    for (int j = 0; j < k; ++j) {
        double v[6], n[3];
        for (int p = 0; p < 3; ++p) {
            double s = sc->val.at2(2 * p, j), c = sc->val.at2(2 * p + 1, j);
            n[p] = std::sqrt(s * s + c * c + 1e-24);
            v[2 * p] = s / n[p];
            v[2 * p + 1] = c / n[p];
        }
        const double s1 = v[0], c1 = v[1], s2 = v[2], c2 = v[3], s3 = v[4], c3 = v[5];
        out.at2(0, j) = c1 * c2;
        out.at2(1, j) = -s1 * c3 + c1 * s2 * s3;
        out.at2(2, j) = s1 * s3 + c1 * s2 * c3;
        out.at2(3, j) = s1 * c2;
        out.at2(4, j) = c1 * c3 + s1 * s2 * s3;
        out.at2(5, j) = -c1 * s3 + s1 * s2 * c3;
        out.at2(6, j) = -s2;
        out.at2(7, j) = c2 * s3;
        out.at2(8, j) = c2 * c3;
    }
    return make_node(std::move(out), {sc}, [](Node& self) {
        auto& sc = self.parents[0];
        if (!sc->needs_grad) return;
        sc->ensure_grad();
        const int k = self.val.dim(1);
        for (int j = 0; j < k; ++j) {
            double raw[6], nrm[3], v[6];
            for (int p = 0; p < 3; ++p) {
                raw[2 * p] = sc->val.at2(2 * p, j);
                raw[2 * p + 1] = sc->val.at2(2 * p + 1, j);
                nrm[p] = std::sqrt(raw[2 * p] * raw[2 * p] + raw[2 * p + 1] * raw[2 * p + 1] +
                                   1e-24);
                v[2 * p] = raw[2 * p] / nrm[p];
                v[2 * p + 1] = raw[2 * p + 1] / nrm[p];
            }
            const double s1 = v[0], c1 = v[1], s2 = v[2], c2 = v[3], s3 = v[4], c3 = v[5];
            double g[9];
            for (int r = 0; r < 9; ++r) g[r] = self.grad.at2(r, j);
            // Gradients w.r.t. the normalized pair entries.
            double gs1 = g[1] * (-c3) + g[2] * s3 + g[3] * c2 + g[4] * (s2 * s3) +
                         g[5] * (s2 * c3);
            double gc1 = g[0] * c2 + g[1] * (s2 * s3) + g[2] * (s2 * c3) + g[4] * c3 +
                         g[5] * (-s3);
            double gs2 = g[1] * (c1 * s3) + g[2] * (c1 * c3) + g[4] * (s1 * s3) +
                         g[5] * (s1 * c3) - g[6];
            double gc2 = g[0] * c1 + g[3] * s1 + g[7] * s3 + g[8] * c3;
            double gs3 = g[1] * (c1 * s2) + g[2] * s1 + g[4] * (s1 * s2) + g[5] * (-c1) +
                         g[7] * c2;
            double gc3 = g[1] * (-s1) + g[2] * (c1 * s2) + g[4] * c1 + g[5] * (s1 * s2) +
                         g[8] * c2;
            const double gpairs[6] = {gs1, gc1, gs2, gc2, gs3, gc3};
            // Chain through the normalization.
            for (int p = 0; p < 3; ++p) {
                double s = raw[2 * p], c = raw[2 * p + 1], n = nrm[p];
                double n3 = n * n * n;
                double gs = gpairs[2 * p], gc = gpairs[2 * p + 1];
                sc->grad[size_t(2 * p) * k + j] += (c * c * gs - s * c * gc) / n3;
                sc->grad[size_t(2 * p + 1) * k + j] += (s * s * gc - s * c * gs) / n3;
            }
        }
    });
}

double grad_check(const std::function<NodePtr(std::vector<NodePtr>&)>& build,
                  std::vector<Tensor> params, double eps, std::string* worst) {
    std::vector<NodePtr> leaves;
    leaves.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        leaves.push_back(leaf(params[i], true, "p" + std::to_string(i)));
    NodePtr root = build(leaves);
    backward(root);

    auto eval = [&](const std::vector<Tensor>& p) {
        std::vector<NodePtr> fresh;
        fresh.reserve(p.size());
        for (size_t i = 0; i < p.size(); ++i) fresh.push_back(leaf(p[i], false));
        return build(fresh)->val[0];
    };

    double worst_err = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t i = 0; i < params[pi].size(); ++i) {
            double saved = params[pi][i];
            params[pi][i] = saved + eps;
            double fp = eval(params);
            params[pi][i] = saved - eps;
            double fm = eval(params);
            params[pi][i] = saved;
            double fd = (fp - fm) / (2 * eps);
            double an = leaves[pi]->has_grad() ? leaves[pi]->grad[i] : 0.0;
            double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
            if (err > worst_err) {
                worst_err = err;
                if (worst)
                    *worst = "p" + std::to_string(pi) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return worst_err;
}

}  // namespace pbev::ad
