#include "pbev/kernels.hpp"

#include <omp.h>

#include <stdexcept>

namespace pbev::kernels {

namespace {
thread_local bool g_parallel = true;
}

bool parallel_enabled() { return g_parallel; }
void set_parallel(bool on) { g_parallel = on; }

ConvDims ConvDims::make(int ci, int hi, int wi, int co, int k, int stride, int pad_h,
                        int pad_w) {
    ConvDims d{ci, hi, wi, co, k, stride, pad_h, pad_w, 0, 0};
    d.ho = (hi + 2 * pad_h - k) / stride + 1;
    d.wo = (wi + 2 * pad_w - k) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: empty output");
    return d;
}

namespace {

inline void conv_fwd_row(const double* x, const double* w, const double* b, double* y,
                         const ConvDims& d, int co, int oy) {
    double* yrow = y + (size_t(co) * d.ho + oy) * d.wo;
    for (int ox = 0; ox < d.wo; ++ox) {
        double acc = b ? b[co] : 0.0;
        const int iy0 = oy * d.stride - d.pad_h;
        const int ix0 = ox * d.stride - d.pad_w;
        for (int ci = 0; ci < d.ci; ++ci) {
            const double* xch = x + size_t(ci) * d.hi * d.wi;
            const double* wch = w + (size_t(co) * d.ci + ci) * d.k * d.k;
            for (int ky = 0; ky < d.k; ++ky) {
                int iy = iy0 + ky;
                if (iy < 0 || iy >= d.hi) continue;
                const double* xr = xch + size_t(iy) * d.wi;
                const double* wr = wch + size_t(ky) * d.k;
                for (int kx = 0; kx < d.k; ++kx) {
                    int ix = ix0 + kx;
                    if (ix < 0 || ix >= d.wi) continue;
                    acc += xr[ix] * wr[kx];
                }
            }
        }
        yrow[ox] = acc;
    }
}

inline void conv_bwd_input_px(const double* gy, const double* w, double* gx,
                              const ConvDims& d, int ci, int iy, int ix) {
    double acc = 0.0;
    for (int co = 0; co < d.co; ++co) {
        const double* gych = gy + size_t(co) * d.ho * d.wo;
        const double* wch = w + (size_t(co) * d.ci + ci) * d.k * d.k;
        for (int ky = 0; ky < d.k; ++ky) {
            int num_y = iy + d.pad_h - ky;
            if (num_y < 0 || num_y % d.stride) continue;
            int oy = num_y / d.stride;
            if (oy >= d.ho) continue;
            for (int kx = 0; kx < d.k; ++kx) {
                int num_x = ix + d.pad_w - kx;
                if (num_x < 0 || num_x % d.stride) continue;
                int ox = num_x / d.stride;
                if (ox >= d.wo) continue;
                acc += gych[size_t(oy) * d.wo + ox] * wch[size_t(ky) * d.k + kx];
            }
        }
    }
    gx[(size_t(ci) * d.hi + iy) * d.wi + ix] += acc;
}

inline void conv_bwd_weight(const double* gy, const double* x, double* gw, const ConvDims& d,
                            int co, int ci, int ky, int kx) {
    double acc = 0.0;
    const double* gych = gy + size_t(co) * d.ho * d.wo;
    const double* xch = x + size_t(ci) * d.hi * d.wi;
    for (int oy = 0; oy < d.ho; ++oy) {
        int iy = oy * d.stride - d.pad_h + ky;
        if (iy < 0 || iy >= d.hi) continue;
        for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox * d.stride - d.pad_w + kx;
            if (ix < 0 || ix >= d.wi) continue;
            acc += gych[size_t(oy) * d.wo + ox] * xch[size_t(iy) * d.wi + ix];
        }
    }
    gw[((size_t(co) * d.ci + ci) * d.k + ky) * d.k + kx] += acc;
}

}  // namespace

void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y,
                           const ConvDims& d) {
    for (int co = 0; co < d.co; ++co)
        for (int oy = 0; oy < d.ho; ++oy) conv_fwd_row(x, w, b, y, d, co, oy);
}

void conv2d_forward_omp(const double* x, const double* w, const double* b, double* y,
                        const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < d.co; ++co)
        for (int oy = 0; oy < d.ho; ++oy) conv_fwd_row(x, w, b, y, d, co, oy);
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvDims& d) {
    if (g_parallel)
        conv2d_forward_omp(x, w, b, y, d);
    else
        conv2d_forward_serial(x, w, b, y, d);
}

void conv2d_backward_input_serial(const double* gy, const double* w, double* gx,
                                  const ConvDims& d) {
    for (int ci = 0; ci < d.ci; ++ci)
        for (int iy = 0; iy < d.hi; ++iy)
            for (int ix = 0; ix < d.wi; ++ix) conv_bwd_input_px(gy, w, gx, d, ci, iy, ix);
}

void conv2d_backward_input_omp(const double* gy, const double* w, double* gx,
                               const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < d.ci; ++ci)
        for (int iy = 0; iy < d.hi; ++iy)
            for (int ix = 0; ix < d.wi; ++ix) conv_bwd_input_px(gy, w, gx, d, ci, iy, ix);
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvDims& d) {
    if (g_parallel)
        conv2d_backward_input_omp(gy, w, gx, d);
    else
        conv2d_backward_input_serial(gy, w, gx, d);
}

void conv2d_backward_params_serial(const double* gy, const double* x, double* gw, double* gb,
                                   const ConvDims& d) {
    for (int co = 0; co < d.co; ++co)
        for (int ci = 0; ci < d.ci; ++ci)
            for (int ky = 0; ky < d.k; ++ky)
                for (int kx = 0; kx < d.k; ++kx) conv_bwd_weight(gy, x, gw, d, co, ci, ky, kx);
    if (gb) {
        for (int co = 0; co < d.co; ++co) {
            double acc = 0.0;
            const double* gych = gy + size_t(co) * d.ho * d.wo;
            for (int i = 0; i < d.ho * d.wo; ++i) acc += gych[i];
            gb[co] += acc;
        }
    }
}

void conv2d_backward_params_omp(const double* gy, const double* x, double* gw, double* gb,
                                const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < d.co; ++co)
        for (int ci = 0; ci < d.ci; ++ci)
            for (int ky = 0; ky < d.k; ++ky)
                for (int kx = 0; kx < d.k; ++kx) conv_bwd_weight(gy, x, gw, d, co, ci, ky, kx);
    if (gb) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < d.co; ++co) {
            double acc = 0.0;
            const double* gych = gy + size_t(co) * d.ho * d.wo;
            for (int i = 0; i < d.ho * d.wo; ++i) acc += gych[i];
            gb[co] += acc;
        }
    }
}

void conv2d_backward_params(const double* gy, const double* x, double* gw, double* gb,
                            const ConvDims& d) {
    if (g_parallel)
        conv2d_backward_params_omp(gy, x, gw, gb, d);
    else
        conv2d_backward_params_serial(gy, x, gw, gb, d);
}

namespace {

inline void linear_fwd_row(const double* x, const double* w, const double* b, double* y,
                           int in, int cols, int o) {
    const double* wrow = w + size_t(o) * in;
    double* yrow = y + size_t(o) * cols;
    for (int c = 0; c < cols; ++c) yrow[c] = b ? b[o] : 0.0;
    for (int i = 0; i < in; ++i) {
        double wi = wrow[i];
        const double* xrow = x + size_t(i) * cols;
        for (int c = 0; c < cols; ++c) yrow[c] += wi * xrow[c];
    }
}

inline void linear_bwd_input_row(const double* gy, const double* w, double* gx, int in,
                                 int out, int cols, int i) {
    double* gxrow = gx + size_t(i) * cols;
    for (int o = 0; o < out; ++o) {
        double wi = w[size_t(o) * in + i];
        const double* gyrow = gy + size_t(o) * cols;
        for (int c = 0; c < cols; ++c) gxrow[c] += wi * gyrow[c];
    }
}

inline void linear_bwd_param_row(const double* gy, const double* x, double* gw, double* gb,
                                 int in, int cols, int o) {
    const double* gyrow = gy + size_t(o) * cols;
    double* gwrow = gw + size_t(o) * in;
    for (int i = 0; i < in; ++i) {
        double acc = 0.0;
        const double* xrow = x + size_t(i) * cols;
        for (int c = 0; c < cols; ++c) acc += gyrow[c] * xrow[c];
        gwrow[i] += acc;
    }
    if (gb) {
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += gyrow[c];
        gb[o] += acc;
    }
}

}  // namespace

void linear_forward_serial(const double* x, const double* w, const double* b, double* y,
                           int in, int out, int cols) {
    for (int o = 0; o < out; ++o) linear_fwd_row(x, w, b, y, in, cols, o);
}

void linear_forward_omp(const double* x, const double* w, const double* b, double* y, int in,
                        int out, int cols) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) linear_fwd_row(x, w, b, y, in, cols, o);
}

void linear_forward(const double* x, const double* w, const double* b, double* y, int in,
                    int out, int cols) {
    if (g_parallel)
        linear_forward_omp(x, w, b, y, in, out, cols);
    else
        linear_forward_serial(x, w, b, y, in, out, cols);
}

void linear_backward_input_serial(const double* gy, const double* w, double* gx, int in,
                                  int out, int cols) {
    for (int i = 0; i < in; ++i) linear_bwd_input_row(gy, w, gx, in, out, cols, i);
}

void linear_backward_input_omp(const double* gy, const double* w, double* gx, int in, int out,
                               int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < in; ++i) linear_bwd_input_row(gy, w, gx, in, out, cols, i);
}

void linear_backward_input(const double* gy, const double* w, double* gx, int in, int out,
                           int cols) {
    if (g_parallel)
        linear_backward_input_omp(gy, w, gx, in, out, cols);
    else
        linear_backward_input_serial(gy, w, gx, in, out, cols);
}

void linear_backward_params_serial(const double* gy, const double* x, double* gw, double* gb,
                                   int in, int out, int cols) {
    for (int o = 0; o < out; ++o) linear_bwd_param_row(gy, x, gw, gb, in, cols, o);
}

void linear_backward_params_omp(const double* gy, const double* x, double* gw, double* gb,
                                int in, int out, int cols) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) linear_bwd_param_row(gy, x, gw, gb, in, cols, o);
}

void linear_backward_params(const double* gy, const double* x, double* gw, double* gb, int in,
                            int out, int cols) {
    if (g_parallel)
        linear_backward_params_omp(gy, x, gw, gb, in, out, cols);
    else
        linear_backward_params_serial(gy, x, gw, gb, in, out, cols);
}

}  // namespace pbev::kernels
