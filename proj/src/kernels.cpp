#include "wccn/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wccn::kernels {

namespace {

inline double conv_out_at(const ConvDims& d, const double* x, const double* w,
                          const double* b, int n, int oc, int oy, int ox) {
  double acc = b ? b[oc] : 0.0;
  const int iy0 = oy * d.stride - d.pad;
  const int ix0 = ox * d.stride - d.pad;
  for (int ic = 0; ic < d.ic; ++ic) {
    const double* xp = x + ((std::size_t)n * d.ic + ic) * d.ih * d.iw;
    const double* wp = w + ((std::size_t)oc * d.ic + ic) * d.kh * d.kw;
    for (int ky = 0; ky < d.kh; ++ky) {
      const int iy = iy0 + ky;
      if (iy < 0 || iy >= d.ih) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int ix = ix0 + kx;
        if (ix < 0 || ix >= d.iw) continue;
        acc += xp[iy * d.iw + ix] * wp[ky * d.kw + kx];
      }
    }
  }
  return acc;
}

// dL/dx at one input cell, gathered over the outputs it feeds.
inline double conv_gx_at(const ConvDims& d, const double* w, const double* gy,
                         int n, int ic, int iy, int ix) {
  double acc = 0.0;
  for (int oc = 0; oc < d.oc; ++oc) {
    const double* wp = w + ((std::size_t)oc * d.ic + ic) * d.kh * d.kw;
    const double* gp = gy + ((std::size_t)n * d.oc + oc) * d.oh * d.ow;
    for (int ky = 0; ky < d.kh; ++ky) {
      const int num_y = iy + d.pad - ky;
      if (num_y < 0 || num_y % d.stride) continue;
      const int oy = num_y / d.stride;
      if (oy >= d.oh) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int num_x = ix + d.pad - kx;
        if (num_x < 0 || num_x % d.stride) continue;
        const int ox = num_x / d.stride;
        if (ox >= d.ow) continue;
        acc += wp[ky * d.kw + kx] * gp[oy * d.ow + ox];
      }
    }
  }
  return acc;
}

inline double conv_gw_at(const ConvDims& d, const double* x, const double* gy,
                         int oc, int ic, int ky, int kx) {
  double acc = 0.0;
  for (int n = 0; n < d.n; ++n) {
    const double* xp = x + ((std::size_t)n * d.ic + ic) * d.ih * d.iw;
    const double* gp = gy + ((std::size_t)n * d.oc + oc) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy) {
      const int iy = oy * d.stride - d.pad + ky;
      if (iy < 0 || iy >= d.ih) continue;
      for (int ox = 0; ox < d.ow; ++ox) {
        const int ix = ox * d.stride - d.pad + kx;
        if (ix < 0 || ix >= d.iw) continue;
        acc += xp[iy * d.iw + ix] * gp[oy * d.ow + ox];
      }
    }
  }
  return acc;
}

inline double conv_gb_at(const ConvDims& d, const double* gy, int oc) {
  double acc = 0.0;
  for (int n = 0; n < d.n; ++n) {
    const double* gp = gy + ((std::size_t)n * d.oc + oc) * d.oh * d.ow;
    for (int i = 0; i < d.oh * d.ow; ++i) acc += gp[i];
  }
  return acc;
}

}  // namespace

void conv2d_forward_serial(const ConvDims& d, const double* x, const double* w,
                           const double* b, double* y) {
  for (int n = 0; n < d.n; ++n)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox)
          y[(((std::size_t)n * d.oc + oc) * d.oh + oy) * d.ow + ox] =
              conv_out_at(d, x, w, b, n, oc, oy, ox);
}

void conv2d_forward_omp(const ConvDims& d, const double* x, const double* w,
                        const double* b, double* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; ++n)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox)
          y[(((std::size_t)n * d.oc + oc) * d.oh + oy) * d.ow + ox] =
              conv_out_at(d, x, w, b, n, oc, oy, ox);
}

void conv2d_backward_serial(const ConvDims& d, const double* x, const double* w,
                            const double* gy, double* gx, double* gw, double* gb) {
  if (gx)
    for (int n = 0; n < d.n; ++n)
      for (int ic = 0; ic < d.ic; ++ic)
        for (int iy = 0; iy < d.ih; ++iy)
          for (int ix = 0; ix < d.iw; ++ix)
            gx[(((std::size_t)n * d.ic + ic) * d.ih + iy) * d.iw + ix] =
                conv_gx_at(d, w, gy, n, ic, iy, ix);
  if (gw)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int ic = 0; ic < d.ic; ++ic)
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx)
            gw[(((std::size_t)oc * d.ic + ic) * d.kh + ky) * d.kw + kx] =
                conv_gw_at(d, x, gy, oc, ic, ky, kx);
  if (gb)
    for (int oc = 0; oc < d.oc; ++oc) gb[oc] = conv_gb_at(d, gy, oc);
}

void conv2d_backward_omp(const ConvDims& d, const double* x, const double* w,
                         const double* gy, double* gx, double* gw, double* gb) {
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n)
      for (int ic = 0; ic < d.ic; ++ic)
        for (int iy = 0; iy < d.ih; ++iy)
          for (int ix = 0; ix < d.iw; ++ix)
            gx[(((std::size_t)n * d.ic + ic) * d.ih + iy) * d.iw + ix] =
                conv_gx_at(d, w, gy, n, ic, iy, ix);
  }
  if (gw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int ic = 0; ic < d.ic; ++ic)
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx)
            gw[(((std::size_t)oc * d.ic + ic) * d.kh + ky) * d.kw + kx] =
                conv_gw_at(d, x, gy, oc, ic, ky, kx);
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.oc; ++oc) gb[oc] = conv_gb_at(d, gy, oc);
  }
}

void matmul_serial(std::size_t M, std::size_t K, std::size_t N, const double* a,
                   const double* b, double* c) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
      c[i * N + j] = acc;
    }
}

void matmul_omp(std::size_t M, std::size_t K, std::size_t N, const double* a,
                const double* b, double* c) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < (long long)M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
      c[i * N + j] = acc;
    }
}

}  // namespace wccn::kernels
