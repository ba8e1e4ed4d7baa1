#include "mil/kernels.hpp"

namespace mil::kernels {

// Parallel layout: threads split disjoint output elements; the per-element
// accumulation order is identical to the serial reference, so these are
// bit-exact with serial:: regardless of thread count.

void conv2d_forward(const double* in, const double* kernel, const double* bias,
                    const Conv2dDims& d, double* out) {
    const int pad = d.pad();
    const int rows = d.out_c * d.out_h;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int oc = r / d.out_h;
        const int oy = r % d.out_h;
        const double* koc = kernel + static_cast<std::size_t>(oc) * d.in_c * d.ksize * d.ksize;
        double* orow = out + static_cast<std::size_t>(r) * d.out_w;
        for (int ox = 0; ox < d.out_w; ++ox) {
            double acc = bias[oc];
            for (int ic = 0; ic < d.in_c; ++ic) {
                const double* inc = in + static_cast<std::size_t>(ic) * d.in_h * d.in_w;
                const double* kic = koc + static_cast<std::size_t>(ic) * d.ksize * d.ksize;
                for (int ky = 0; ky < d.ksize; ++ky) {
                    const int iy = oy * d.stride + ky - pad;
                    if (iy < 0 || iy >= d.in_h) continue;
                    for (int kx = 0; kx < d.ksize; ++kx) {
                        const int ix = ox * d.stride + kx - pad;
                        if (ix < 0 || ix >= d.in_w) continue;
                        acc += inc[iy * d.in_w + ix] * kic[ky * d.ksize + kx];
                    }
                }
            }
            orow[ox] = acc;
        }
    }
}

void conv2d_backward_input(const double* gout, const double* kernel,
                           const Conv2dDims& d, double* gin) {
    const int pad = d.pad();
    const int rows = d.in_c * d.in_h;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int ic = r / d.in_h;
        const int iy = r % d.in_h;
        double* grow = gin + static_cast<std::size_t>(r) * d.in_w;
        for (int ix = 0; ix < d.in_w; ++ix) {
            double acc = 0.0;
            for (int oc = 0; oc < d.out_c; ++oc) {
                const double* goc = gout + static_cast<std::size_t>(oc) * d.out_h * d.out_w;
                const double* kic = kernel +
                    (static_cast<std::size_t>(oc) * d.in_c + ic) * d.ksize * d.ksize;
                for (int ky = 0; ky < d.ksize; ++ky) {
                    const int ny = iy + pad - ky;
                    if (ny < 0 || ny % d.stride != 0) continue;
                    const int oy = ny / d.stride;
                    if (oy >= d.out_h) continue;
                    for (int kx = 0; kx < d.ksize; ++kx) {
                        const int nx = ix + pad - kx;
                        if (nx < 0 || nx % d.stride != 0) continue;
                        const int ox = nx / d.stride;
                        if (ox >= d.out_w) continue;
                        acc += goc[oy * d.out_w + ox] * kic[ky * d.ksize + kx];
                    }
                }
            }
            grow[ix] = acc;
        }
    }
}

void conv2d_backward_params(const double* gout, const double* in,
                            const Conv2dDims& d, double* gkernel, double* gbias) {
    const int pad = d.pad();
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.out_c; ++oc) {
        const double* goc = gout + static_cast<std::size_t>(oc) * d.out_h * d.out_w;
        double bacc = 0.0;
        for (int i = 0; i < d.out_h * d.out_w; ++i) bacc += goc[i];
        gbias[oc] = bacc;
        for (int ic = 0; ic < d.in_c; ++ic) {
            const double* inc = in + static_cast<std::size_t>(ic) * d.in_h * d.in_w;
            double* gk = gkernel + (static_cast<std::size_t>(oc) * d.in_c + ic) * d.ksize * d.ksize;
            for (int ky = 0; ky < d.ksize; ++ky) {
                for (int kx = 0; kx < d.ksize; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy * d.stride + ky - pad;
                        if (iy < 0 || iy >= d.in_h) continue;
                        for (int ox = 0; ox < d.out_w; ++ox) {
                            const int ix = ox * d.stride + kx - pad;
                            if (ix < 0 || ix >= d.in_w) continue;
                            acc += goc[oy * d.out_w + ox] * inc[iy * d.in_w + ix];
                        }
                    }
                    gk[ky * d.ksize + kx] = acc;
                }
            }
        }
    }
}

}  // namespace mil::kernels
