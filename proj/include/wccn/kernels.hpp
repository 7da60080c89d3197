#pragma once

#include <cstddef>

namespace wccn::kernels {

// Dense conv2d kernels, NCHW layout, weight [OC,IC,KH,KW].
// The _omp variants parallelize over independent output (or gather target)
// elements, so they are bit-identical to the serial references for any
// thread count.

struct ConvDims {
  int n, ic, ih, iw;
  int oc, kh, kw;
  int stride, pad;
  int oh, ow;
};

void conv2d_forward_serial(const ConvDims& d, const double* x, const double* w,
                           const double* b, double* y);
void conv2d_forward_omp(const ConvDims& d, const double* x, const double* w,
                        const double* b, double* y);

// Gather-style backward: gx, gw, gb are written (not accumulated).
void conv2d_backward_serial(const ConvDims& d, const double* x, const double* w,
                            const double* gy, double* gx, double* gw, double* gb);
void conv2d_backward_omp(const ConvDims& d, const double* x, const double* w,
                         const double* gy, double* gx, double* gw, double* gb);

// c[M,N] = a[M,K] * b[K,N]
void matmul_serial(std::size_t M, std::size_t K, std::size_t N, const double* a,
                   const double* b, double* c);
void matmul_omp(std::size_t M, std::size_t K, std::size_t N, const double* a,
                const double* b, double* c);

}  // namespace wccn::kernels
