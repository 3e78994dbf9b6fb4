#include <cmath>
#include <cstring>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/errors.hpp"
#include "dgf/kernels.hpp"

// Elementwise, matmul and convolution ops. Hot loops go through
// kernels::ops(); everything else is a plain shared loop (identical under
// either backend by construction).

namespace dgf::diffmath {
namespace {

namespace K = dgf::kernels;

const Tensor& T(Var v) {
  if (!v.valid()) throw ContractViolation("op called with an invalid Var");
  return v.t();
}

void same_shape(Var a, Var b, const char* op) {
  if (T(a).shape != T(b).shape)
    throw ContractViolation(std::string(op) + ": shape mismatch " +
                            shape_str(T(a).shape) + " vs " +
                            shape_str(T(b).shape));
}

void same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape)
    throw ContractViolation(std::string(op) + ": operands on different tapes");
}

// dst (may be null) += src
void acc(double* dst, const double* src, std::size_t n) {
  if (dst) K::ops().add(dst, src, dst, n);
}

}  // namespace

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  same_shape(a, b, "add");
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().add(T(a).data.data(), T(b).data.data(), out.data.data(), n);
  const int ia = a.id, ib = b.id;
  return a.tape->emit("add", {ia, ib}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    acc(t.grad_buf(ia), g, n);
    acc(t.grad_buf(ib), g, n);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  same_shape(a, b, "sub");
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().sub(T(a).data.data(), T(b).data.data(), out.data.data(), n);
  const int ia = a.id, ib = b.id;
  return a.tape->emit("sub", {ia, ib}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    acc(t.grad_buf(ia), g, n);
    if (double* gb = t.grad_buf(ib)) K::ops().axpy(-1.0, g, gb, n);
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  same_shape(a, b, "mul");
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().mul(T(a).data.data(), T(b).data.data(), out.data.data(), n);
  const int ia = a.id, ib = b.id;
  return a.tape->emit("mul", {ia, ib}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    std::vector<double> scratch(n);
    if (double* ga = t.grad_buf(ia)) {
      K::ops().mul(g, t.tensor(ib).data.data(), scratch.data(), n);
      acc(ga, scratch.data(), n);
    }
    if (double* gb = t.grad_buf(ib)) {
      K::ops().mul(g, t.tensor(ia).data.data(), scratch.data(), n);
      acc(gb, scratch.data(), n);
    }
  });
}

Var div(Var a, Var b) {
  same_tape(a, b, "div");
  same_shape(a, b, "div");
  const std::size_t n = T(a).numel();
  for (double v : T(b).data)
    if (v == 0.0) throw DomainError("div: divisor contains a zero");
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().div(T(a).data.data(), T(b).data.data(), out.data.data(), n);
  const int ia = a.id, ib = b.id;
  return a.tape->emit("div", {ia, ib}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    const double* bv = t.tensor(ib).data.data();
    std::vector<double> scratch(n);
    if (double* ga = t.grad_buf(ia)) {
      K::ops().div(g, bv, scratch.data(), n);
      acc(ga, scratch.data(), n);
    }
    if (double* gb = t.grad_buf(ib)) {
      // d/db (a/b) = -a/b^2 = -out/b
      const double* ov = t.tensor(o).data.data();
      K::ops().mul(g, ov, scratch.data(), n);
      K::ops().div(scratch.data(), bv, scratch.data(), n);
      K::ops().axpy(-1.0, scratch.data(), gb, n);
    }
  });
}

Var adds(Var a, double s) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().adds(T(a).data.data(), s, out.data.data(), n);
  const int ia = a.id;
  return a.tape->emit("adds", {ia}, std::move(out), [=](Tape& t, int o) {
    acc(t.grad_buf(ia), t.grad(o).data(), n);
  });
}

Var muls(Var a, double s) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().muls(T(a).data.data(), s, out.data.data(), n);
  const int ia = a.id;
  return a.tape->emit("muls", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia))
      K::ops().axpy(s, t.grad(o).data(), ga, n);
  });
}

Var rsubs(Var a, double s) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  K::ops().rsubs(T(a).data.data(), s, out.data.data(), n);
  const int ia = a.id;
  return a.tape->emit("rsubs", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia))
      K::ops().axpy(-1.0, t.grad(o).data(), ga, n);
  });
}

Var rdivs(Var a, double s) {
  const std::size_t n = T(a).numel();
  for (double v : T(a).data)
    if (v == 0.0) throw DomainError("rdivs: divisor contains a zero");
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = s / T(a).data[i];
  const int ia = a.id;
  return a.tape->emit("rdivs", {ia}, std::move(out), [=](Tape& t, int o) {
    double* ga = t.grad_buf(ia);
    if (!ga) return;
    const double* g = t.grad(o).data();
    const double* av = t.tensor(ia).data.data();
    const double* ov = t.tensor(o).data.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i] * ov[i] / av[i];
  });
}

Var vexp(Var a) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = std::exp(T(a).data[i]);
  const int ia = a.id;
  return a.tape->emit("exp", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia)) {
      std::vector<double> scratch(n);
      K::ops().mul(t.grad(o).data(), t.tensor(o).data.data(), scratch.data(), n);
      acc(ga, scratch.data(), n);
    }
  });
}

Var vlog(Var a) {
  const std::size_t n = T(a).numel();
  for (double v : T(a).data)
    if (v <= 0.0) throw DomainError("log: argument contains a value <= 0");
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = std::log(T(a).data[i]);
  const int ia = a.id;
  return a.tape->emit("log", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia)) {
      std::vector<double> scratch(n);
      K::ops().div(t.grad(o).data(), t.tensor(ia).data.data(), scratch.data(), n);
      acc(ga, scratch.data(), n);
    }
  });
}

Var vsqrt(Var a) {
  const std::size_t n = T(a).numel();
  for (double v : T(a).data)
    if (v <= 0.0) throw DomainError("sqrt: argument contains a value <= 0");
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = std::sqrt(T(a).data[i]);
  const int ia = a.id;
  return a.tape->emit("sqrt", {ia}, std::move(out), [=](Tape& t, int o) {
    double* ga = t.grad_buf(ia);
    if (!ga) return;
    const double* g = t.grad(o).data();
    const double* ov = t.tensor(o).data.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += 0.5 * g[i] / ov[i];
  });
}

Var vabs(Var a) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = std::fabs(T(a).data[i]);
  const int ia = a.id;
  return a.tape->emit("abs", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia))
      K::ops().abs_bwd(t.tensor(ia).data.data(), t.grad(o).data(), ga, n);
  });
}

Var relu(Var a) {
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i)
    out.data[i] = T(a).data[i] > 0.0 ? T(a).data[i] : 0.0;
  const int ia = a.id;
  return a.tape->emit("relu", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia))
      K::ops().relu_bwd(t.tensor(ia).data.data(), t.grad(o).data(), ga, n);
  });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractViolation("clamp: lo must be <= hi");
  const std::size_t n = T(a).numel();
  Tensor out = Tensor::zeros(T(a).shape);
  for (std::size_t i = 0; i < n; ++i) {
    double v = T(a).data[i];
    out.data[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  const int ia = a.id;
  return a.tape->emit("clamp", {ia}, std::move(out), [=](Tape& t, int o) {
    if (double* ga = t.grad_buf(ia))
      K::ops().clamp_bwd(t.tensor(ia).data.data(), lo, hi, t.grad(o).data(),
                         ga, n);
  });
}

Var neg(Var a) { return muls(a, -1.0); }

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Shape& sa = T(a).shape;
  const Shape& sb = T(b).shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw ContractViolation("matmul: incompatible shapes " + shape_str(sa) +
                            " x " + shape_str(sb));
  const std::size_t m = static_cast<std::size_t>(sa[0]);
  const std::size_t k = static_cast<std::size_t>(sa[1]);
  const std::size_t n = static_cast<std::size_t>(sb[1]);
  Tensor out = Tensor::zeros({sa[0], sb[1]});
  K::ops().gemm(T(a).data.data(), T(b).data.data(), out.data.data(), m, k, n,
                false);
  const int ia = a.id, ib = b.id;
  return a.tape->emit("matmul", {ia, ib}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    if (double* ga = t.grad_buf(ia)) {
      // dA = G * B^T
      std::vector<double> bt(k * n);
      const double* bv = t.tensor(ib).data.data();
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
      K::ops().gemm(g, bt.data(), ga, m, n, k, true);
    }
    if (double* gb = t.grad_buf(ib)) {
      // dB = A^T * G
      std::vector<double> at(m * k);
      const double* av = t.tensor(ia).data.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * m + i] = av[i * k + p];
      K::ops().gemm(at.data(), g, gb, k, m, n, true);
    }
  });
}

Var transpose2d(Var a) {
  const Shape& s = T(a).shape;
  if (s.size() != 2)
    throw ContractViolation("transpose2d: need rank 2, got " + shape_str(s));
  const std::size_t m = static_cast<std::size_t>(s[0]);
  const std::size_t n = static_cast<std::size_t>(s[1]);
  Tensor out = Tensor::zeros({s[1], s[0]});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data[j * m + i] = T(a).data[i * n + j];
  const int ia = a.id;
  return a.tape->emit("transpose2d", {ia}, std::move(out), [=](Tape& t, int o) {
    double* ga = t.grad_buf(ia);
    if (!ga) return;
    const double* g = t.grad(o).data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

namespace {

// generic strided conv used for stride > 1 (cold path, shared loops)
void conv_general_fwd(const double* x, std::size_t ci, std::size_t h,
                      std::size_t w, const double* wt, std::size_t co,
                      std::size_t k, std::size_t stride, double* out) {
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double a = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              a = std::fma(x[(c * h + oy * stride + ky) * w + ox * stride + kx],
                           wt[((o * ci + c) * k + ky) * k + kx], a);
        out[(o * ho + oy) * wo + ox] = a;
      }
}

void conv_general_bwd(const double* x, std::size_t ci, std::size_t h,
                      std::size_t w, const double* wt, std::size_t co,
                      std::size_t k, std::size_t stride, const double* dy,
                      double* dx, double* dw) {
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const double g = dy[(o * ho + oy) * wo + ox];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t xi =
                  (c * h + oy * stride + ky) * w + ox * stride + kx;
              if (dx) dx[xi] += g * wt[((o * ci + c) * k + ky) * k + kx];
              if (dw) dw[((o * ci + c) * k + ky) * k + kx] += g * x[xi];
            }
      }
}

}  // namespace

Var conv2d_valid(Var x, Var w, int stride) {
  same_tape(x, w, "conv2d");
  const Shape& sx = T(x).shape;
  const Shape& sw = T(w).shape;
  if (sx.size() != 3)
    throw ContractViolation("conv2d: input must be [C,H,W], got " +
                            shape_str(sx));
  if (sw.size() != 4 || sw[2] != sw[3])
    throw ContractViolation("conv2d: weight must be [Co,Ci,k,k], got " +
                            shape_str(sw));
  if (sw[1] != sx[0])
    throw ContractViolation("conv2d: weight Ci " + std::to_string(sw[1]) +
                            " does not match input C " + std::to_string(sx[0]));
  if (stride < 1) throw ContractViolation("conv2d: stride must be >= 1");
  const int k = sw[2];
  if (k > sx[1] || k > sx[2])
    throw ContractViolation("conv2d: kernel larger than input");
  if ((sx[1] - k) % stride != 0 || (sx[2] - k) % stride != 0)
    throw ContractViolation(
        "conv2d: (H-k) and (W-k) must be divisible by stride; got H=" +
        std::to_string(sx[1]) + " W=" + std::to_string(sx[2]) +
        " k=" + std::to_string(k) + " stride=" + std::to_string(stride));

  const std::size_t ci = static_cast<std::size_t>(sx[0]);
  const std::size_t h = static_cast<std::size_t>(sx[1]);
  const std::size_t wd = static_cast<std::size_t>(sx[2]);
  const std::size_t co = static_cast<std::size_t>(sw[0]);
  const std::size_t ks = static_cast<std::size_t>(k);
  const std::size_t st = static_cast<std::size_t>(stride);
  const int ho = (sx[1] - k) / stride + 1, wo = (sx[2] - k) / stride + 1;

  Tensor out = Tensor::zeros({sw[0], ho, wo});
  if (st == 1)
    K::ops().conv_valid(T(x).data.data(), ci, h, wd, T(w).data.data(), co, ks,
                        out.data.data(), false);
  else
    conv_general_fwd(T(x).data.data(), ci, h, wd, T(w).data.data(), co, ks, st,
                     out.data.data());

  const int ix = x.id, iw = w.id;
  return x.tape->emit("conv2d", {ix, iw}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    double* gx = t.grad_buf(ix);
    double* gw = t.grad_buf(iw);
    const double* xv = t.tensor(ix).data.data();
    const double* wv = t.tensor(iw).data.data();
    const std::size_t hos = static_cast<std::size_t>(ho);
    const std::size_t wos = static_cast<std::size_t>(wo);
    if (st != 1) {
      conv_general_bwd(xv, ci, h, wd, wv, co, ks, st, g, gx, gw);
      return;
    }
    if (gx) {
      // data grad as a valid conv of the zero-padded upstream grad with the
      // weights flipped and with in/out channels swapped
      const std::size_t p = ks - 1;
      const std::size_t hp = hos + 2 * p, wp = wos + 2 * p;
      std::vector<double> gpad(co * hp * wp, 0.0);
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t y = 0; y < hos; ++y)
          std::memcpy(&gpad[(c * hp + y + p) * wp + p], &g[(c * hos + y) * wos],
                      wos * sizeof(double));
      std::vector<double> wrot(ci * co * ks * ks);
      for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx)
              wrot[((c * co + oc) * ks + ky) * ks + kx] =
                  wv[((oc * ci + c) * ks + ks - 1 - ky) * ks + ks - 1 - kx];
      K::ops().conv_valid(gpad.data(), co, hp, wp, wrot.data(), ci, ks, gx,
                          true);
    }
    if (gw) K::ops().conv_wgrad(xv, ci, h, wd, g, co, ks, gw);
  });
}

Var zero_pad2d(Var x, int pad) {
  const Shape& s = T(x).shape;
  if (s.size() != 3)
    throw ContractViolation("zero_pad2d: input must be [C,H,W]");
  if (pad < 0) throw ContractViolation("zero_pad2d: pad must be >= 0");
  if (pad == 0) return x;
  const std::size_t c = static_cast<std::size_t>(s[0]);
  const std::size_t h = static_cast<std::size_t>(s[1]);
  const std::size_t w = static_cast<std::size_t>(s[2]);
  const std::size_t p = static_cast<std::size_t>(pad);
  const std::size_t hp = h + 2 * p, wp = w + 2 * p;
  Tensor out = Tensor::zeros({s[0], s[1] + 2 * pad, s[2] + 2 * pad});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(&out.data[(ci * hp + y + p) * wp + p],
                  &T(x).data[(ci * h + y) * w], w * sizeof(double));
  const int ix = x.id;
  return x.tape->emit("zero_pad2d", {ix}, std::move(out), [=](Tape& t, int o) {
    double* gx = t.grad_buf(ix);
    if (!gx) return;
    const double* g = t.grad(o).data();
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < h; ++y) {
        const double* grow = &g[(ci * hp + y + p) * wp + p];
        double* xrow = &gx[(ci * h + y) * w];
        K::ops().add(xrow, grow, xrow, w);
      }
  });
}

namespace {

// triangle-wave reflection of i onto [0, n); identity inside, works for any
// overhang (periodic continuation), n == 1 maps everything to 0
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace

Var conv2d(Var x, Var w, int stride, PadMode mode, int pad) {
  if (pad < 0) throw ContractViolation("conv2d: pad must be >= 0");
  Var xp = x;
  if (pad > 0) {
    const Shape& sw = T(w).shape;
    if (sw.size() == 4 && sw[2] % 2 == 0)
      throw ContractViolation("conv2d: padded conv requires an odd kernel");
    if (mode == PadMode::zero) {
      xp = zero_pad2d(x, pad);
    } else {
      const Shape& s = T(x).shape;
      if (s.size() != 3) throw ContractViolation("conv2d: input must be [C,H,W]");
      const std::int64_t c = s[0], h = s[1], wd = s[2];
      const std::int64_t hp = h + 2 * pad, wp = wd + 2 * pad;
      auto idx = std::make_shared<std::vector<std::int64_t>>();
      idx->reserve(static_cast<std::size_t>(c * hp * wp));
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t y = 0; y < hp; ++y) {
          const std::int64_t sy = reflect_index(y - pad, h);
          for (std::int64_t xx = 0; xx < wp; ++xx)
            idx->push_back((ci * h + sy) * wd + reflect_index(xx - pad, wd));
        }
      xp = gather(x, idx,
                  {s[0], static_cast<int>(hp), static_cast<int>(wp)});
    }
  }
  return conv2d_valid(xp, w, stride);
}

}  // namespace dgf::diffmath
