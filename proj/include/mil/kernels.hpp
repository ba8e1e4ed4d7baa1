#pragma once

#include <cstddef>

namespace mil::kernels {

// Cross-correlation dims. Zero padding is implied by the kernel size:
// 3x3 kernels pad by 1 (size-preserving at stride 1), 1x1 kernels pad by 0.
// out_h = ceil(in_h / stride), likewise for width.
struct Conv2dDims {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0;
    int ksize = 0;   // 1 or 3
    int stride = 1;
    int out_h = 0, out_w = 0;

    static Conv2dDims make(int in_c, int in_h, int in_w, int out_c, int ksize, int stride);
    int pad() const { return ksize == 3 ? 1 : 0; }
};

// OpenMP-parallel kernels. Each output element is owned by one thread and
// its inner summation order matches the serial reference, so results are
// bit-identical to serial:: at any thread count.
void conv2d_forward(const double* in, const double* kernel, const double* bias,
                    const Conv2dDims& d, double* out);
void conv2d_backward_input(const double* gout, const double* kernel,
                           const Conv2dDims& d, double* gin);
void conv2d_backward_params(const double* gout, const double* in,
                            const Conv2dDims& d, double* gkernel, double* gbias);

// Serial reference implementations, kept for testing and as the comparison
// baseline of the benchmark tool.
namespace serial {
void conv2d_forward(const double* in, const double* kernel, const double* bias,
                    const Conv2dDims& d, double* out);
void conv2d_backward_input(const double* gout, const double* kernel,
                           const Conv2dDims& d, double* gin);
void conv2d_backward_params(const double* gout, const double* in,
                            const Conv2dDims& d, double* gkernel, double* gbias);
}  // namespace serial

}  // namespace mil::kernels
