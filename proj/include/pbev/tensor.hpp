#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbev {

// Dense row-major tensor of doubles, up to 4 dims. 64-bit everywhere: the
// gradient oracles demand it and the desk-scale nets are small enough.
class Tensor {
  public:
    Tensor() : nd_(0), dims_{0, 0, 0, 0} {}

    static Tensor zeros1(int a) { return Tensor({a}); }
    static Tensor zeros2(int a, int b) { return Tensor({a, b}); }
    static Tensor zeros3(int a, int b, int c) { return Tensor({a, b, c}); }
    static Tensor zeros4(int a, int b, int c, int d) { return Tensor({a, b, c, d}); }

    explicit Tensor(std::initializer_list<int> dims) {
        nd_ = int(dims.size());
        assert(nd_ >= 1 && nd_ <= 4);
        int i = 0;
        size_t n = 1;
        for (int d : dims) {
            assert(d > 0);
            dims_[i++] = d;
            n *= size_t(d);
        }
        for (; i < 4; ++i) dims_[i] = 1;
        v_.assign(n, 0.0);
    }

    static Tensor scalar(double x) {
        Tensor t({1});
        t.v_[0] = x;
        return t;
    }

    int ndim() const { return nd_; }
    int dim(int i) const { return dims_[i]; }
    size_t size() const { return v_.size(); }
    bool same_shape(const Tensor& o) const { return nd_ == o.nd_ && dims_ == o.dims_; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    double& operator[](size_t i) { return v_[i]; }
    double operator[](size_t i) const { return v_[i]; }

    double& at2(int a, int b) { return v_[size_t(a) * dims_[1] + b]; }
    double at2(int a, int b) const { return v_[size_t(a) * dims_[1] + b]; }
    double& at3(int a, int b, int c) { return v_[(size_t(a) * dims_[1] + b) * dims_[2] + c]; }
    double at3(int a, int b, int c) const { return v_[(size_t(a) * dims_[1] + b) * dims_[2] + c]; }
    double& at4(int a, int b, int c, int d) {
        return v_[((size_t(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
    }
    double at4(int a, int b, int c, int d) const {
        return v_[((size_t(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d];
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    Tensor reshaped(std::initializer_list<int> dims) const {
        Tensor t(dims);
        if (t.size() != size()) throw std::invalid_argument("reshape: element count mismatch");
        t.v_ = v_;
        return t;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (int i = 0; i < nd_; ++i) s += (i ? "," : "") + std::to_string(dims_[i]);
        return s + ")";
    }

  private:
    int nd_;
    std::array<int, 4> dims_;
    std::vector<double> v_;
};

}  // namespace pbev
