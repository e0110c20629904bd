#pragma once

namespace pbev::kernels {

// Every kernel has a serial reference and an OpenMP variant. Both compute
// each output element as an independent gather with a fixed inner summation
// order, so the two variants are bit-identical for any thread count.

// Thread-local switch consulted by the dispatching wrappers; scene-level
// workers turn it off to avoid nested parallelism.
bool parallel_enabled();
void set_parallel(bool on);

struct ConvDims {
    int ci, hi, wi;      // input channels / height / width
    int co, k, stride;   // output channels, square kernel, stride
    int pad_h, pad_w;
    int ho, wo;          // derived output size

    static ConvDims make(int ci, int hi, int wi, int co, int k, int stride, int pad_h,
                         int pad_w);
};

// x: (ci,hi,wi), w: (co,ci,k,k), b: (co), y: (co,ho,wo)
void conv2d_forward_serial(const double* x, const double* w, const double* b, double* y,
                           const ConvDims& d);
void conv2d_forward_omp(const double* x, const double* w, const double* b, double* y,
                        const ConvDims& d);
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvDims& d);

// gx accumulates (callers zero it when that is what they need)
void conv2d_backward_input_serial(const double* gy, const double* w, double* gx,
                                  const ConvDims& d);
void conv2d_backward_input_omp(const double* gy, const double* w, double* gx,
                               const ConvDims& d);
void conv2d_backward_input(const double* gy, const double* w, double* gx, const ConvDims& d);

// gw/gb accumulate
void conv2d_backward_params_serial(const double* gy, const double* x, double* gw, double* gb,
                                   const ConvDims& d);
void conv2d_backward_params_omp(const double* gy, const double* x, double* gw, double* gb,
                                const ConvDims& d);
void conv2d_backward_params(const double* gy, const double* x, double* gw, double* gb,
                            const ConvDims& d);

// x: (in,cols), w: (out,in), b: (out), y: (out,cols)
void linear_forward_serial(const double* x, const double* w, const double* b, double* y,
                           int in, int out, int cols);
void linear_forward_omp(const double* x, const double* w, const double* b, double* y, int in,
                        int out, int cols);
void linear_forward(const double* x, const double* w, const double* b, double* y, int in,
                    int out, int cols);

void linear_backward_input_serial(const double* gy, const double* w, double* gx, int in,
                                  int out, int cols);
void linear_backward_input_omp(const double* gy, const double* w, double* gx, int in, int out,
                               int cols);
void linear_backward_input(const double* gy, const double* w, double* gx, int in, int out,
                           int cols);

void linear_backward_params_serial(const double* gy, const double* x, double* gw, double* gb,
                                   int in, int out, int cols);
void linear_backward_params_omp(const double* gy, const double* x, double* gw, double* gb,
                                int in, int out, int cols);
void linear_backward_params(const double* gy, const double* x, double* gw, double* gb, int in,
                            int out, int cols);

}  // namespace pbev::kernels
