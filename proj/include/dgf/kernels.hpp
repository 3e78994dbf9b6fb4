#pragma once
// Low-level numeric kernels on raw double buffers.
//
// Two backends: a scalar reference and an AVX2 variant. Both are built
// unconditionally; the AVX2 one only runs when the CPU supports it. The two
// are bit-identical by construction: SIMD lanes always map to independent
// output elements, and the per-output accumulation order matches the scalar
// loops. Fused multiply-add is used explicitly (std::fma / vfmadd) in both
// backends, never left to compiler contraction.
//
// Env override DGF_KERNELS=scalar|avx2 forces a backend; avx2 on a machine
// without AVX2 throws.

#include <cstddef>
#include <cstdint>
#include <string>

namespace dgf::kernels {

struct Ops {
  // elementwise, out may alias a or b
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*div)(const double* a, const double* b, double* out, std::size_t n);
  void (*adds)(const double* a, double s, double* out, std::size_t n);
  void (*muls)(const double* a, double s, double* out, std::size_t n);
  void (*rsubs)(const double* a, double s, double* out, std::size_t n);  // s - a
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n); // y += alpha*x

  // backward helpers; all accumulate into gx
  void (*relu_bwd)(const double* x, const double* g, double* gx, std::size_t n);
  void (*abs_bwd)(const double* x, const double* g, double* gx, std::size_t n);
  void (*clamp_bwd)(const double* x, double lo, double hi, const double* g,
                    double* gx, std::size_t n);

  // C[M x N] = A[M x K] * B[K x N]; accumulate adds into C instead of storing
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

  // valid cross-correlation, stride 1:
  //   out[co,oy,ox] (+)= sum_{ci,ky,kx} xp[ci,oy+ky,ox+kx] * w[co,ci,ky,kx]
  // xp is [ci x hp x wp], out is [co x (hp-k+1) x (wp-k+1)]
  void (*conv_valid)(const double* xp, std::size_t ci, std::size_t hp,
                     std::size_t wp, const double* w, std::size_t co,
                     std::size_t k, double* out, bool accumulate);

  // weight gradient of the same conv:
  //   dw[co,ci,ky,kx] += sum_{oy,ox} dy[co,oy,ox] * xp[ci,oy+ky,ox+kx]
  void (*conv_wgrad)(const double* xp, std::size_t ci, std::size_t hp,
                     std::size_t wp, const double* dy, std::size_t co,
                     std::size_t k, double* dw);

  const char* name;
};

// Active backend (resolved once: DGF_KERNELS override, else AVX2 if the CPU
// has it, else scalar).
const Ops& ops();

const Ops& scalar_ops();
bool avx2_available();
const Ops& avx2_ops();  // throws if unavailable

// -- shared helpers, single implementation, deterministic order --

// sequential sum in index order
double sum(const double* a, std::size_t n);
// out[i] = src[idx[i]]
void gather(const double* src, const std::int64_t* idx, double* out,
            std::size_t n);
// dst[idx[i]] += g[i], applied in increasing i (duplicates well-defined)
void scatter_add(double* dst, const std::int64_t* idx, const double* g,
                 std::size_t n);

}  // namespace dgf::kernels
