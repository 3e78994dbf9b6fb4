#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/errors.hpp"
#include "dgf/kernels.hpp"

// Structural ops: gather/concat/reshape, softmax, reductions, axis
// broadcasts and bilinear upsampling. All plain shared loops with a fixed
// iteration order.

namespace dgf::diffmath {
namespace {

namespace K = dgf::kernels;

const Tensor& T(Var v) {
  if (!v.valid()) throw ContractViolation("op called with an invalid Var");
  return v.t();
}

// split a shape at `axis` into (pre, len, post) extents
void axis_split(const Shape& s, int axis, std::size_t& pre, std::size_t& len,
                std::size_t& post, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ContractViolation(std::string(op) + ": axis " + std::to_string(axis) +
                            " out of range for " + shape_str(s));
  pre = len = post = 1;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    const std::size_t d = static_cast<std::size_t>(s[i]);
    if (i < axis) pre *= d;
    else if (i == axis) len = d;
    else post *= d;
  }
}

}  // namespace

Var gather(Var x, std::shared_ptr<const std::vector<std::int64_t>> idx,
           Shape out_shape) {
  if (!idx) throw ContractViolation("gather: null index vector");
  const std::size_t n = idx->size();
  if (n != shape_numel(out_shape))
    throw ContractViolation("gather: index count " + std::to_string(n) +
                            " does not match out shape " +
                            shape_str(out_shape));
  const std::int64_t limit = static_cast<std::int64_t>(T(x).numel());
  for (std::int64_t i : *idx)
    if (i < 0 || i >= limit)
      throw ContractViolation("gather: index " + std::to_string(i) +
                              " out of range [0," + std::to_string(limit) + ")");
  Tensor out = Tensor::zeros(std::move(out_shape));
  K::gather(T(x).data.data(), idx->data(), out.data.data(), n);
  const int ix = x.id;
  return x.tape->emit("gather", {ix}, std::move(out), [=](Tape& t, int o) {
    if (double* gx = t.grad_buf(ix))
      K::scatter_add(gx, idx->data(), t.grad(o).data(), n);
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ContractViolation("concat: no inputs");
  Tape* tape = xs[0].tape;
  const Shape& s0 = T(xs[0]).shape;
  int total = 0;
  for (const Var& v : xs) {
    if (v.tape != tape) throw ContractViolation("concat: inputs on different tapes");
    const Shape& s = T(v).shape;
    if (s.size() != s0.size())
      throw ContractViolation("concat: rank mismatch");
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (i != axis && s[i] != s0[i])
        throw ContractViolation("concat: shape mismatch " + shape_str(s) +
                                " vs " + shape_str(s0) + " on axis " +
                                std::to_string(i));
    std::size_t pre, len, post;
    axis_split(s, axis, pre, len, post, "concat");
    total += s[axis];
  }
  Shape so = s0;
  so[static_cast<std::size_t>(axis)] = total;
  std::size_t pre, len_total, post;
  axis_split(so, axis, pre, len_total, post, "concat");

  Tensor out = Tensor::zeros(so);
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  std::size_t off = 0;
  for (const Var& v : xs) {
    const std::size_t len = static_cast<std::size_t>(T(v).shape[axis]);
    for (std::size_t i = 0; i < pre; ++i)
      std::memcpy(&out.data[(i * len_total + off) * post],
                  &T(v).data[i * len * post], len * post * sizeof(double));
    ids.push_back(v.id);
    lens.push_back(len);
    off += len;
  }
  return tape->emit("concat", ids, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    std::size_t offset = 0;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      const std::size_t len = lens[v];
      if (double* gx = t.grad_buf(ids[v])) {
        for (std::size_t i = 0; i < pre; ++i) {
          const double* gsrc = &g[(i * len_total + offset) * post];
          double* gdst = &gx[i * len * post];
          K::ops().add(gdst, gsrc, gdst, len * post);
        }
      }
      offset += len;
    }
  });
}

Var reshape(Var x, Shape s) {
  if (shape_numel(s) != T(x).numel())
    throw ContractViolation("reshape: cannot view " + shape_str(T(x).shape) +
                            " as " + shape_str(s));
  Tensor out = Tensor::from(std::move(s), T(x).data);
  const int ix = x.id;
  const std::size_t n = T(x).numel();
  return x.tape->emit("reshape", {ix}, std::move(out), [=](Tape& t, int o) {
    if (double* gx = t.grad_buf(ix)) {
      const double* g = t.grad(o).data();
      K::ops().add(gx, g, gx, n);
    }
  });
}

Var detach(Var x) {
  return x.tape->leaf(Tensor::from(T(x).shape, T(x).data, false));
}

Var softmax(Var x, int axis) {
  const Shape& s = T(x).shape;
  std::size_t pre, len, post;
  axis_split(s, axis, pre, len, post, "softmax");
  Tensor out = Tensor::zeros(s);
  const double* xv = T(x).data.data();
  for (std::size_t i = 0; i < pre; ++i)
    for (std::size_t kk = 0; kk < post; ++kk) {
      const std::size_t base = i * len * post + kk;
      double m = xv[base];
      for (std::size_t j = 1; j < len; ++j)
        m = std::max(m, xv[base + j * post]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * post] - m);
        out.data[base + j * post] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out.data[base + j * post] /= z;
    }
  const int ix = x.id;
  return x.tape->emit("softmax", {ix}, std::move(out), [=](Tape& t, int o) {
    double* gx = t.grad_buf(ix);
    if (!gx) return;
    const double* g = t.grad(o).data();
    const double* sv = t.tensor(o).data.data();
    for (std::size_t i = 0; i < pre; ++i)
      for (std::size_t kk = 0; kk < post; ++kk) {
        const std::size_t base = i * len * post + kk;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          dot += g[base + j * post] * sv[base + j * post];
        for (std::size_t j = 0; j < len; ++j)
          gx[base + j * post] +=
              sv[base + j * post] * (g[base + j * post] - dot);
      }
  });
}

Var reduce_sum(Var x) {
  const std::size_t n = T(x).numel();
  Tensor out = Tensor::from({1}, {K::sum(T(x).data.data(), n)});
  const int ix = x.id;
  return x.tape->emit("reduce_sum", {ix}, std::move(out), [=](Tape& t, int o) {
    if (double* gx = t.grad_buf(ix)) {
      const double g = t.grad(o)[0];
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

Var reduce_mean(Var x) {
  const std::size_t n = T(x).numel();
  Tensor out = Tensor::from({1}, {K::sum(T(x).data.data(), n) / double(n)});
  const int ix = x.id;
  return x.tape->emit("reduce_mean", {ix}, std::move(out), [=](Tape& t, int o) {
    if (double* gx = t.grad_buf(ix)) {
      const double g = t.grad(o)[0] / double(n);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

namespace {

void rank2_axis(const Shape& s, int axis, const char* op) {
  if (s.size() != 2)
    throw ContractViolation(std::string(op) +
                            ": axis reduction needs rank 2, got " +
                            shape_str(s));
  if (axis != 0 && axis != 1)
    throw ContractViolation(std::string(op) + ": axis must be 0 or 1");
}

}  // namespace

Var reduce_sum(Var x, int axis) {
  rank2_axis(T(x).shape, axis, "reduce_sum");
  const std::size_t m = static_cast<std::size_t>(T(x).shape[0]);
  const std::size_t n = static_cast<std::size_t>(T(x).shape[1]);
  const double* xv = T(x).data.data();
  Tensor out = Tensor::zeros({axis == 0 ? T(x).shape[1] : T(x).shape[0]});
  if (axis == 0) {
    for (std::size_t j = 0; j < n; ++j) {
      double a = 0.0;
      for (std::size_t i = 0; i < m; ++i) a += xv[i * n + j];
      out.data[j] = a;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double a = 0.0;
      for (std::size_t j = 0; j < n; ++j) a += xv[i * n + j];
      out.data[i] = a;
    }
  }
  const int ix = x.id;
  return x.tape->emit("reduce_sum", {ix}, std::move(out), [=](Tape& t, int o) {
    double* gx = t.grad_buf(ix);
    if (!gx) return;
    const double* g = t.grad(o).data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] += axis == 0 ? g[j] : g[i];
  });
}

Var reduce_mean(Var x, int axis) {
  rank2_axis(T(x).shape, axis, "reduce_mean");
  const double len =
      static_cast<double>(axis == 0 ? T(x).shape[0] : T(x).shape[1]);
  return muls(reduce_sum(x, axis), 1.0 / len);
}

Var reduce_max(Var x) {
  const std::size_t n = T(x).numel();
  const double* xv = T(x).data.data();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (xv[i] > xv[arg]) arg = i;
  Tensor out = Tensor::from({1}, {xv[arg]});
  const int ix = x.id;
  return x.tape->emit("reduce_max", {ix}, std::move(out), [=](Tape& t, int o) {
    // subgradient: all mass to the first maximizer
    if (double* gx = t.grad_buf(ix)) gx[arg] += t.grad(o)[0];
  });
}

Var reduce_max(Var x, int axis) {
  rank2_axis(T(x).shape, axis, "reduce_max");
  const std::size_t m = static_cast<std::size_t>(T(x).shape[0]);
  const std::size_t n = static_cast<std::size_t>(T(x).shape[1]);
  const double* xv = T(x).data.data();
  const std::size_t olen = axis == 0 ? n : m;
  auto args = std::make_shared<std::vector<std::size_t>>(olen);
  Tensor out = Tensor::zeros({static_cast<int>(olen)});
  if (axis == 0) {
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t a = 0;
      for (std::size_t i = 1; i < m; ++i)
        if (xv[i * n + j] > xv[a * n + j]) a = i;
      (*args)[j] = a;
      out.data[j] = xv[a * n + j];
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t a = 0;
      for (std::size_t j = 1; j < n; ++j)
        if (xv[i * n + j] > xv[i * n + a]) a = j;
      (*args)[i] = a;
      out.data[i] = xv[i * n + a];
    }
  }
  const int ix = x.id;
  return x.tape->emit("reduce_max", {ix}, std::move(out), [=](Tape& t, int o) {
    double* gx = t.grad_buf(ix);
    if (!gx) return;
    const double* g = t.grad(o).data();
    for (std::size_t i = 0; i < olen; ++i) {
      const std::size_t a = (*args)[i];
      if (axis == 0) gx[a * n + i] += g[i];
      else gx[i * n + a] += g[i];
    }
  });
}

Var bcast(BcastKind kind, Var x, Var v, int axis) {
  if (x.tape != v.tape) throw ContractViolation("bcast: operands on different tapes");
  const Shape& sx = T(x).shape;
  const Shape& sv = T(v).shape;
  std::size_t pre, len, post;
  axis_split(sx, axis, pre, len, post, "bcast");
  if (sv.size() != 1 || static_cast<std::size_t>(sv[0]) != len)
    throw ContractViolation("bcast: vector shape " + shape_str(sv) +
                            " does not match axis extent " +
                            std::to_string(len));
  const double* xv = T(x).data.data();
  const double* vv = T(v).data.data();
  if (kind == BcastKind::div)
    for (std::size_t j = 0; j < len; ++j)
      if (vv[j] == 0.0) throw DomainError("bcast div: divisor contains a zero");

  Tensor out = Tensor::zeros(sx);
  for (std::size_t i = 0; i < pre; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t base = (i * len + j) * post;
      const double s = vv[j];
      switch (kind) {
        case BcastKind::add:
          K::ops().adds(xv + base, s, out.data.data() + base, post);
          break;
        case BcastKind::sub:
          K::ops().adds(xv + base, -s, out.data.data() + base, post);
          break;
        case BcastKind::mul:
          K::ops().muls(xv + base, s, out.data.data() + base, post);
          break;
        case BcastKind::div:
          for (std::size_t p = 0; p < post; ++p)
            out.data[base + p] = xv[base + p] / s;
          break;
      }
    }
  const int ix = x.id, iv = v.id;
  return x.tape->emit("bcast", {ix, iv}, std::move(out), [=](Tape& t, int o) {
    const double* g = t.grad(o).data();
    const double* xd = t.tensor(ix).data.data();
    const double* vd = t.tensor(iv).data.data();
    double* gx = t.grad_buf(ix);
    double* gv = t.grad_buf(iv);
    for (std::size_t i = 0; i < pre; ++i)
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t base = (i * len + j) * post;
        const double s = vd[j];
        for (std::size_t p = 0; p < post; ++p) {
          const double gg = g[base + p];
          switch (kind) {
            case BcastKind::add:
              if (gx) gx[base + p] += gg;
              if (gv) gv[j] += gg;
              break;
            case BcastKind::sub:
              if (gx) gx[base + p] += gg;
              if (gv) gv[j] -= gg;
              break;
            case BcastKind::mul:
              if (gx) gx[base + p] += gg * s;
              if (gv) gv[j] += gg * xd[base + p];
              break;
            case BcastKind::div:
              if (gx) gx[base + p] += gg / s;
              if (gv) gv[j] -= gg * xd[base + p] / (s * s);
              break;
          }
        }
      }
  });
}

Var upsample2x_bilinear(Var x) {
  const Shape& s = T(x).shape;
  if (s.size() != 3)
    throw ContractViolation("upsample2x_bilinear: input must be [C,H,W]");
  const std::size_t c = static_cast<std::size_t>(s[0]);
  const std::size_t h = static_cast<std::size_t>(s[1]);
  const std::size_t w = static_cast<std::size_t>(s[2]);

  // half-pixel sampling; taps and weights per output coordinate
  auto taps = [](std::size_t n) {
    std::vector<std::size_t> i0(2 * n), i1(2 * n);
    std::vector<double> w1(2 * n);
    for (std::size_t o = 0; o < 2 * n; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      const double f = std::floor(src);
      const long long base = static_cast<long long>(f);
      const long long last = static_cast<long long>(n) - 1;
      i0[o] = static_cast<std::size_t>(std::clamp(base, 0LL, last));
      i1[o] = static_cast<std::size_t>(std::clamp(base + 1, 0LL, last));
      w1[o] = src - f;
    }
    return std::tuple(i0, i1, w1);
  };
  auto [y0, y1, wy] = taps(h);
  auto [x0, x1, wx] = taps(w);

  Tensor out = Tensor::zeros({s[0], s[1] * 2, s[2] * 2});
  const double* xv = T(x).data.data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        const double a = xv[(ci * h + y0[oy]) * w + x0[ox]];
        const double b = xv[(ci * h + y0[oy]) * w + x1[ox]];
        const double cc = xv[(ci * h + y1[oy]) * w + x0[ox]];
        const double d = xv[(ci * h + y1[oy]) * w + x1[ox]];
        const double top = a * (1.0 - wx[ox]) + b * wx[ox];
        const double bot = cc * (1.0 - wx[ox]) + d * wx[ox];
        out.data[(ci * 2 * h + oy) * 2 * w + ox] =
            top * (1.0 - wy[oy]) + bot * wy[oy];
      }
  const int ix = x.id;
  return x.tape->emit(
      "upsample2x", {ix}, std::move(out),
      [=, y0 = y0, y1 = y1, wy = wy, x0 = x0, x1 = x1, wx = wx](Tape& t, int o) {
        double* gx = t.grad_buf(ix);
        if (!gx) return;
        const double* g = t.grad(o).data();
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t oy = 0; oy < 2 * h; ++oy)
            for (std::size_t ox = 0; ox < 2 * w; ++ox) {
              const double gg = g[(ci * 2 * h + oy) * 2 * w + ox];
              gx[(ci * h + y0[oy]) * w + x0[ox]] +=
                  gg * (1.0 - wy[oy]) * (1.0 - wx[ox]);
              gx[(ci * h + y0[oy]) * w + x1[ox]] += gg * (1.0 - wy[oy]) * wx[ox];
              gx[(ci * h + y1[oy]) * w + x0[ox]] += gg * wy[oy] * (1.0 - wx[ox]);
              gx[(ci * h + y1[oy]) * w + x1[ox]] += gg * wy[oy] * wx[ox];
            }
      });
}

Var space_to_depth2(Var x) {
  const Shape& s = T(x).shape;
  if (s.size() != 3)
    throw ContractViolation("space_to_depth2: input must be [C,H,W]");
  if (s[1] % 2 != 0 || s[2] % 2 != 0)
    throw ContractViolation("space_to_depth2: H and W must be even, got " +
                            shape_str(s));
  const std::int64_t c = s[0], h = s[1], w = s[2];
  const std::int64_t ho = h / 2, wo = w / 2;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(c * h * w));
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t dy = 0; dy < 2; ++dy)
      for (std::int64_t dx = 0; dx < 2; ++dx)
        for (std::int64_t y = 0; y < ho; ++y)
          for (std::int64_t xx = 0; xx < wo; ++xx)
            idx->push_back((ci * h + 2 * y + dy) * w + 2 * xx + dx);
  return gather(x, idx,
                {static_cast<int>(4 * c), static_cast<int>(ho),
                 static_cast<int>(wo)});
}

}  // namespace dgf::diffmath
