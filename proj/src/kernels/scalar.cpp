#include <cmath>
#include <cstddef>

#include "dgf/kernels.hpp"

// Reference backend. Loop orders here define the accumulation order the AVX2
// backend must reproduce per output element.

namespace dgf::kernels {
namespace {

void add_(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void adds_(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
}
void muls_(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void rsubs_(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = s - a[i];
}
void axpy_(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void relu_bwd_(const double* x, const double* g, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) gx[i] += g[i];
}
void abs_bwd_(const double* x, const double* g, double* gx, std::size_t n) {
  // subgradient 0 at x == 0
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
    else if (x[i] < 0.0) gx[i] -= g[i];
  }
}
void clamp_bwd_(const double* x, double lo, double hi, const double* g,
                double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > lo && x[i] < hi) gx[i] += g[i];
}

void gemm_(const double* a, const double* b, double* c, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc = std::fma(a[i * k + p], b[p * n + j], acc);
      c[i * n + j] = acc;
    }
  }
}

void conv_valid_(const double* xp, std::size_t ci, std::size_t hp,
                 std::size_t wp, const double* w, std::size_t co,
                 std::size_t k, double* out, bool accumulate) {
  const std::size_t ho = hp - k + 1, wo = wp - k + 1;
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = accumulate ? out[(o * ho + oy) * wo + ox] : 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              acc = std::fma(xp[(c * hp + oy + ky) * wp + ox + kx],
                             w[((o * ci + c) * k + ky) * k + kx], acc);
        out[(o * ho + oy) * wo + ox] = acc;
      }
    }
  }
}

void conv_wgrad_(const double* xp, std::size_t ci, std::size_t hp,
                 std::size_t wp, const double* dy, std::size_t co,
                 std::size_t k, double* dw) {
  const std::size_t ho = hp - k + 1, wo = wp - k + 1;
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
              acc = std::fma(dy[(o * ho + oy) * wo + ox],
                             xp[(c * hp + oy + ky) * wp + ox + kx], acc);
          dw[((o * ci + c) * k + ky) * k + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {add_,      sub_,      mul_,       div_,
                          adds_,     muls_,     rsubs_,     axpy_,
                          relu_bwd_, abs_bwd_,  clamp_bwd_, gemm_,
                          conv_valid_, conv_wgrad_, "scalar"};
  return ops;
}

double sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void gather(const double* src, const std::int64_t* idx, double* out,
            std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = src[idx[i]];
}

void scatter_add(double* dst, const std::int64_t* idx, const double* g,
                 std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[idx[i]] += g[i];
}

}  // namespace dgf::kernels
