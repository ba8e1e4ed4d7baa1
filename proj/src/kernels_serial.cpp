#include "mil/kernels.hpp"

#include "mil/errors.hpp"

namespace mil::kernels {

Conv2dDims Conv2dDims::make(int in_c, int in_h, int in_w, int out_c, int ksize, int stride) {
    if (ksize != 1 && ksize != 3) throw DataError("conv2d: kernel size must be 1 or 3");
    if (stride < 1) throw DataError("conv2d: stride must be >= 1");
    Conv2dDims d;
    d.in_c = in_c;
    d.in_h = in_h;
    d.in_w = in_w;
    d.out_c = out_c;
    d.ksize = ksize;
    d.stride = stride;
    d.out_h = (in_h + stride - 1) / stride;
    d.out_w = (in_w + stride - 1) / stride;
    return d;
}

namespace serial {

void conv2d_forward(const double* in, const double* kernel, const double* bias,
                    const Conv2dDims& d, double* out) {
    const int pad = d.pad();
    for (int oc = 0; oc < d.out_c; ++oc) {
        const double* koc = kernel + static_cast<std::size_t>(oc) * d.in_c * d.ksize * d.ksize;
        for (int oy = 0; oy < d.out_h; ++oy) {
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
                out[(static_cast<std::size_t>(oc) * d.out_h + oy) * d.out_w + ox] = acc;
            }
        }
    }
}

void conv2d_backward_input(const double* gout, const double* kernel,
                           const Conv2dDims& d, double* gin) {
    const int pad = d.pad();
    for (int ic = 0; ic < d.in_c; ++ic) {
        for (int iy = 0; iy < d.in_h; ++iy) {
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
                gin[(static_cast<std::size_t>(ic) * d.in_h + iy) * d.in_w + ix] = acc;
            }
        }
    }
}

void conv2d_backward_params(const double* gout, const double* in,
                            const Conv2dDims& d, double* gkernel, double* gbias) {
    const int pad = d.pad();
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

}  // namespace serial
}  // namespace mil::kernels
