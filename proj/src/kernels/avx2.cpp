#include <immintrin.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "dgf/kernels.hpp"

// AVX2 backend, 4 doubles per vector. Lanes always map to independent output
// elements and per-output accumulation order matches scalar.cpp, so results
// are bit-identical to the reference. Conditional accumulations (relu/abs/
// clamp backward) use blends rather than adding 0.0, which would flip the
// sign of a -0.0 gradient.

namespace dgf::kernels {
namespace {

void add_(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void div_(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] / b[i];
}
void adds_(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] + s;
}
void muls_(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}
void rsubs_(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(vs, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = s - a[i];
}
void axpy_(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void relu_bwd_(const double* x, const double* g, double* gx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vgx = _mm256_loadu_pd(gx + i);
    const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
    const __m256d updated = _mm256_add_pd(vgx, _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(gx + i, _mm256_blendv_pd(vgx, updated, mask));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) gx[i] += g[i];
}
void abs_bwd_(const double* x, const double* g, double* gx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vg = _mm256_loadu_pd(g + i);
    const __m256d vgx = _mm256_loadu_pd(gx + i);
    const __m256d pos = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
    const __m256d neg = _mm256_cmp_pd(vx, zero, _CMP_LT_OQ);
    __m256d r = _mm256_blendv_pd(vgx, _mm256_add_pd(vgx, vg), pos);
    r = _mm256_blendv_pd(r, _mm256_sub_pd(vgx, vg), neg);
    _mm256_storeu_pd(gx + i, r);
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
    else if (x[i] < 0.0) gx[i] -= g[i];
  }
}
void clamp_bwd_(const double* x, double lo, double hi, const double* g,
                double* gx, std::size_t n) {
  const __m256d vlo = _mm256_set1_pd(lo), vhi = _mm256_set1_pd(hi);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vgx = _mm256_loadu_pd(gx + i);
    const __m256d mask = _mm256_and_pd(_mm256_cmp_pd(vx, vlo, _CMP_GT_OQ),
                                       _mm256_cmp_pd(vx, vhi, _CMP_LT_OQ));
    const __m256d updated = _mm256_add_pd(vgx, _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(gx + i, _mm256_blendv_pd(vgx, updated, mask));
  }
  for (; i < n; ++i)
    if (x[i] > lo && x[i] < hi) gx[i] += g[i];
}

// lanes over columns of C; k-loop order matches scalar
void gemm_(const double* a, const double* b, double* c, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = accumulate ? _mm256_loadu_pd(c + i * n + j)
                               : _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(a[i * k + p]),
                              _mm256_loadu_pd(b + p * n + j), acc);
      _mm256_storeu_pd(c + i * n + j, acc);
    }
    for (; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc = std::fma(a[i * k + p], b[p * n + j], acc);
      c[i * n + j] = acc;
    }
  }
}

// lanes over output x; (ci,ky,kx) order matches scalar
void conv_valid_(const double* xp, std::size_t ci, std::size_t hp,
                 std::size_t wp, const double* w, std::size_t co,
                 std::size_t k, double* out, bool accumulate) {
  const std::size_t ho = hp - k + 1, wo = wp - k + 1;
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      double* orow = out + (o * ho + oy) * wo;
      std::size_t ox = 0;
      for (; ox + 4 <= wo; ox += 4) {
        __m256d acc = accumulate ? _mm256_loadu_pd(orow + ox)
                                 : _mm256_setzero_pd();
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const double* xrow = xp + (c * hp + oy + ky) * wp + ox;
            const double* wrow = w + ((o * ci + c) * k + ky) * k;
            for (std::size_t kx = 0; kx < k; ++kx)
              acc = _mm256_fmadd_pd(_mm256_loadu_pd(xrow + kx),
                                    _mm256_set1_pd(wrow[kx]), acc);
          }
        _mm256_storeu_pd(orow + ox, acc);
      }
      for (; ox < wo; ++ox) {
        double acc = accumulate ? orow[ox] : 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              acc = std::fma(xp[(c * hp + oy + ky) * wp + ox + kx],
                             w[((o * ci + c) * k + ky) * k + kx], acc);
        orow[ox] = acc;
      }
    }
  }
}

// lanes over ci via a channels-last copy of xp; per-weight (oy,ox)
// accumulation order matches scalar
void conv_wgrad_(const double* xp, std::size_t ci, std::size_t hp,
                 std::size_t wp, const double* dy, std::size_t co,
                 std::size_t k, double* dw) {
  const std::size_t ho = hp - k + 1, wo = wp - k + 1;
  std::vector<double> xt(hp * wp * ci);
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t y = 0; y < hp; ++y)
      for (std::size_t x = 0; x < wp; ++x)
        xt[(y * wp + x) * ci + c] = xp[(c * hp + y) * wp + x];

  for (std::size_t o = 0; o < co; ++o) {
    std::size_t c = 0;
    for (; c + 4 <= ci; c += 4) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          __m256d acc = _mm256_setzero_pd();
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const double* dyrow = dy + (o * ho + oy) * wo;
            const double* xtrow = xt.data() + ((oy + ky) * wp + kx) * ci + c;
            for (std::size_t ox = 0; ox < wo; ++ox)
              acc = _mm256_fmadd_pd(_mm256_set1_pd(dyrow[ox]),
                                    _mm256_loadu_pd(xtrow + ox * ci), acc);
          }
          alignas(32) double lanes[4];
          _mm256_store_pd(lanes, acc);
          for (int l = 0; l < 4; ++l)
            dw[((o * ci + c + l) * k + ky) * k + kx] += lanes[l];
        }
      }
    }
    for (; c < ci; ++c) {
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

const Ops& avx2_ops() {
  static const Ops ops = {add_,      sub_,      mul_,       div_,
                          adds_,     muls_,     rsubs_,     axpy_,
                          relu_bwd_, abs_bwd_,  clamp_bwd_, gemm_,
                          conv_valid_, conv_wgrad_, "avx2"};
  return ops;
}

}  // namespace dgf::kernels
