#include <algorithm>
#include <cmath>

#include "dgf/errors.hpp"
#include "dgf/losskit.hpp"

namespace dgf::losskit {

using diffmath::BcastKind;
using diffmath::Shape;

void LossWeights::validate() const {
  if (!(tau > 0.0) || tau > 1.0)
    throw ContractViolation("tau must be in (0, 1]");
  for (double l : {lambda_l1, lambda_es, lambda_pes, lambda_depth, lambda_seg,
                   lambda_cond})
    if (!(l >= 0.0)) throw ContractViolation("loss weights must be >= 0");
  if (boundary_k < 1 || boundary_k % 2 == 0)
    throw ContractViolation("boundary dilation k must be odd and >= 1");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ContractViolation("need 0 < d_min < d_max");
}

LossWeights LossWeights::from_keyval(KeyVal kv) {
  LossWeights w;
  w.tau = kv.take_double("tau", w.tau);
  w.lambda_l1 = kv.take_double("lambda_l1", w.lambda_l1);
  w.lambda_es = kv.take_double("lambda_es", w.lambda_es);
  w.lambda_pes = kv.take_double("lambda_pes", w.lambda_pes);
  w.lambda_depth = kv.take_double("lambda_depth", w.lambda_depth);
  w.lambda_seg = kv.take_double("lambda_seg", w.lambda_seg);
  w.lambda_cond = kv.take_double("lambda_cond", w.lambda_cond);
  w.boundary_k = static_cast<int>(kv.take_int("boundary_k", w.boundary_k));
  w.d_min = kv.take_double("d_min", w.d_min);
  w.d_max = kv.take_double("d_max", w.d_max);
  w.smooth_log_domain = kv.take_bool("smooth_log_domain", w.smooth_log_domain);
  kv.finish();
  w.validate();
  return w;
}

int kept_count(double tau, int n) {
  if (!(tau > 0.0) || tau > 1.0)
    throw ContractViolation("tau must be in (0, 1]");
  if (n < 1) throw ContractViolation("kept_count needs n >= 1");
  const double x = tau * static_cast<double>(n);
  int k = static_cast<int>(std::ceil(x * (1.0 - 1e-12)));
  return std::min(n, std::max(1, k));
}

std::vector<std::int64_t> tau_filter(const std::vector<double>& r, double tau) {
  if (r.empty()) throw ContractViolation("tau_filter on an empty residual set");
  const int n = static_cast<int>(r.size());
  const int k = kept_count(tau, n);
  std::vector<std::int64_t> order(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  // stable partial ordering by value keeps the smaller index on ties
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return r[static_cast<std::size_t>(a)] < r[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

BoundaryWeights panoptic_boundary_weights(const PanopticMap& pan, int k) {
  if (k < 1 || k % 2 == 0)
    throw ContractViolation("boundary dilation k must be odd and >= 1");
  const int h = pan.height, w = pan.width;
  if (static_cast<std::size_t>(h) * w != pan.class_id.size() ||
      pan.class_id.size() != pan.instance_id.size())
    throw ContractViolation("panoptic map sizes disagree");
  BoundaryWeights bw;
  bw.height = h;
  bw.width = w;

  auto same = [&](std::size_t a, std::size_t b) {
    return pan.class_id[a] == pan.class_id[b] &&
           pan.instance_id[a] == pan.instance_id[b];
  };
  auto nonvoid = [&](std::size_t a) {
    return pan.class_id[a] != scenegen::kVoidClass;
  };

  // erosion of b with a k x k window == dilation of its zero set; separable
  auto erode = [&](std::vector<double> b, int bh, int bw_) {
    const int r = k / 2;
    std::vector<double> tmp(b.size());
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw_; ++x) {
        double m = 1.0;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= bw_) continue;
          m = std::min(m, b[static_cast<std::size_t>(y) * bw_ + xx]);
        }
        tmp[static_cast<std::size_t>(y) * bw_ + x] = m;
      }
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw_; ++x) {
        double m = 1.0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= bh) continue;
          m = std::min(m, tmp[static_cast<std::size_t>(yy) * bw_ + x]);
        }
        b[static_cast<std::size_t>(y) * bw_ + x] = m;
      }
    return b;
  };

  if (w > 1) {
    std::vector<double> b(static_cast<std::size_t>(h) * (w - 1));
    std::vector<double> v(b.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w - 1; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const std::size_t d = static_cast<std::size_t>(y) * (w - 1) + x;
        b[d] = same(p, p + 1) ? 1.0 : 0.0;
        v[d] = (nonvoid(p) && nonvoid(p + 1)) ? 1.0 : 0.0;
      }
    b = erode(std::move(b), h, w - 1);
    bw.wx.resize(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) bw.wx[i] = b[i] * v[i];
  }
  if (h > 1) {
    std::vector<double> b(static_cast<std::size_t>(h - 1) * w);
    std::vector<double> v(b.size());
    for (int y = 0; y < h - 1; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const std::size_t d = static_cast<std::size_t>(y) * w + x;
        b[d] = same(p, p + w) ? 1.0 : 0.0;
        v[d] = (nonvoid(p) && nonvoid(p + w)) ? 1.0 : 0.0;
      }
    b = erode(std::move(b), h - 1, w);
    bw.wy.resize(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) bw.wy[i] = b[i] * v[i];
  }
  return bw;
}

namespace {

void check_hw(const Var& pred, int h, int w, const char* what) {
  if (pred.shape() != Shape{h, w})
    throw ContractViolation(std::string(what) + ": depth map shape mismatch");
}

// replicate a scalar Var to length n (gathers are constant-index)
Var repeat_scalar(Var s, int n) {
  auto idx = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(n), 0);
  return diffmath::gather(s, idx, Shape{n});
}

// weighted absolute forward differences of d at the positions idx_hi/idx_lo,
// summed; weights enter as a constant leaf
Var weighted_diff_sum(Tape& tape, Var d, std::vector<std::int64_t> lo,
                      std::vector<std::int64_t> hi, std::vector<double> weights) {
  const int n = static_cast<int>(weights.size());
  Var a = diffmath::gather(
      d, std::make_shared<std::vector<std::int64_t>>(std::move(hi)), Shape{n});
  Var b = diffmath::gather(
      d, std::make_shared<std::vector<std::int64_t>>(std::move(lo)), Shape{n});
  Var wleaf = tape.leaf(Shape{n}, std::move(weights), false);
  return diffmath::reduce_sum(diffmath::mul(diffmath::vabs(diffmath::sub(a, b)), wleaf));
}

Var smoothness(Tape& tape, Var pred, const std::vector<double>& wx,
               const std::vector<double>& wy, int h, int w, bool log_domain) {
  check_hw(pred, h, w, "smoothness");
  Var d = log_domain ? diffmath::vlog(pred) : pred;
  Var total = tape.scalar(0.0);
  if (w > 1) {
    std::vector<std::int64_t> lo, hi;
    lo.reserve(wx.size());
    hi.reserve(wx.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w - 1; ++x) {
        lo.push_back(static_cast<std::int64_t>(y) * w + x);
        hi.push_back(static_cast<std::int64_t>(y) * w + x + 1);
      }
    total = diffmath::add(total, weighted_diff_sum(tape, d, std::move(lo),
                                                   std::move(hi), wx));
  }
  if (h > 1) {
    std::vector<std::int64_t> lo, hi;
    lo.reserve(wy.size());
    hi.reserve(wy.size());
    for (int y = 0; y < h - 1; ++y)
      for (int x = 0; x < w; ++x) {
        lo.push_back(static_cast<std::int64_t>(y) * w + x);
        hi.push_back(static_cast<std::int64_t>(y + 1) * w + x);
      }
    total = diffmath::add(total, weighted_diff_sum(tape, d, std::move(lo),
                                                   std::move(hi), wy));
  }
  return diffmath::muls(total, 1.0 / (static_cast<double>(h) * w));
}

}  // namespace

Residuals log_residuals(Tape& tape, Var pred, const SparseDepthMap& gt,
                        double d_min, double d_max) {
  check_hw(pred, gt.height, gt.width, "log_residuals");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ContractViolation("need 0 < d_min < d_max");
  Residuals out;
  std::vector<double> log_gt;
  for (std::size_t i = 0; i < gt.valid.size(); ++i) {
    if (!gt.valid[i]) continue;
    out.pixels.push_back(static_cast<std::int64_t>(i));
    log_gt.push_back(
        std::log(std::min(d_max, std::max(d_min, gt.depth[i]))));
  }
  if (out.pixels.empty())
    throw ContractViolation("no valid depth pixels to supervise");
  const int n = static_cast<int>(out.pixels.size());
  Var p = diffmath::gather(
      pred, std::make_shared<std::vector<std::int64_t>>(out.pixels), Shape{n});
  Var g = tape.leaf(Shape{n}, std::move(log_gt), false);
  out.r = diffmath::vabs(diffmath::sub(diffmath::vlog(p), g));
  return out;
}

LogL1 loss_log_l1(Tape& tape, Var pred, const SparseDepthMap& gt,
                  const LossWeights& w) {
  const Residuals res = log_residuals(tape, pred, gt, w.d_min, w.d_max);
  // selection happens on forward values and is a constant in backward
  auto kept = std::make_shared<std::vector<std::int64_t>>(
      tau_filter(res.r.data(), w.tau));
  LogL1 out;
  out.n_valid = static_cast<int>(res.pixels.size());
  out.n_kept = static_cast<int>(kept->size());
  out.loss = diffmath::reduce_mean(
      diffmath::gather(res.r, kept, Shape{out.n_kept}));
  return out;
}

Var loss_edge_smooth(Tape& tape, Var pred, const Tensor& rgb, bool log_domain) {
  if (rgb.shape.size() != 3 || rgb.shape[0] != 3)
    throw ContractViolation("edge smoothness needs rgb [3,H,W]");
  const int h = rgb.shape[1], w = rgb.shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> intensity(plane);
  for (std::size_t i = 0; i < plane; ++i)
    intensity[i] =
        (rgb.data[i] + rgb.data[plane + i] + rgb.data[2 * plane + i]) / 3.0;
  std::vector<double> wx, wy;
  if (w > 1) {
    wx.reserve(plane - h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w - 1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        wx.push_back(std::exp(-std::abs(intensity[i + 1] - intensity[i])));
      }
  }
  if (h > 1) {
    wy.reserve(plane - w);
    for (int y = 0; y < h - 1; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        wy.push_back(std::exp(-std::abs(intensity[i + w] - intensity[i])));
      }
  }
  return smoothness(tape, pred, wx, wy, h, w, log_domain);
}

Var loss_panoptic_smooth(Tape& tape, Var pred, const PanopticMap& pan, int k,
                         bool log_domain) {
  const BoundaryWeights bw = panoptic_boundary_weights(pan, k);
  return smoothness(tape, pred, bw.wx, bw.wy, pan.height, pan.width, log_domain);
}

Var loss_seg(Tape& tape, Var logits, const PanopticMap& pan) {
  (void)tape;
  if (logits.shape().size() != 3)
    throw ContractViolation("segmentation logits must be [C,H,W]");
  const int c = logits.shape()[0];
  const int h = logits.shape()[1], w = logits.shape()[2];
  if (h != pan.height || w != pan.width)
    throw ContractViolation("segmentation logits do not match the label map");
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  std::vector<std::int64_t> pix, true_idx;
  for (std::size_t i = 0; i < plane; ++i) {
    const int cls = pan.class_id[i];
    if (cls == scenegen::kVoidClass) continue;
    if (cls >= c)
      throw ContractViolation("class id exceeds logit channels");
    pix.push_back(static_cast<std::int64_t>(i));
    true_idx.push_back(static_cast<std::int64_t>(cls) *
                           static_cast<std::int64_t>(plane) +
                       static_cast<std::int64_t>(i));
  }
  if (pix.empty())
    throw ContractViolation("all pixels are void; segmentation loss undefined");
  const int n = static_cast<int>(pix.size());

  auto grid = std::make_shared<std::vector<std::int64_t>>();
  grid->reserve(static_cast<std::size_t>(c) * n);
  for (int cc = 0; cc < c; ++cc)
    for (int j = 0; j < n; ++j)
      grid->push_back(static_cast<std::int64_t>(cc) *
                          static_cast<std::int64_t>(plane) +
                      pix[static_cast<std::size_t>(j)]);
  Var sel = diffmath::gather(logits, grid, Shape{c, n});

  // shift-invariant logsumexp; the shift is detached, which is exact because
  // d lse / d x is unchanged by constant shifts
  Var m = diffmath::detach(diffmath::reduce_max(sel, 0));
  Var z = diffmath::bcast(BcastKind::sub, sel, m, 1);
  Var lse = diffmath::add(
      diffmath::vlog(diffmath::reduce_sum(diffmath::vexp(z), 0)), m);
  Var truth = diffmath::gather(
      logits, std::make_shared<std::vector<std::int64_t>>(std::move(true_idx)),
      Shape{n});
  return diffmath::reduce_mean(diffmath::sub(lse, truth));
}

Var loss_cond(Tape& tape, Var logits, ConditionLabel cond) {
  if (logits.numel() != 8)
    throw ContractViolation("condition logits must have 8 entries");
  Var flat = diffmath::reshape(logits, Shape{8});
  Var m = diffmath::detach(diffmath::reduce_max(flat));
  Var z = diffmath::sub(flat, repeat_scalar(m, 8));
  Var lse = diffmath::add(
      diffmath::vlog(diffmath::reduce_sum(diffmath::vexp(z))), m);
  auto idx = std::make_shared<std::vector<std::int64_t>>(
      1, static_cast<std::int64_t>(cond.index()));
  Var truth = diffmath::gather(flat, idx, Shape{1});
  (void)tape;
  return diffmath::sub(lse, truth);
}

DepthLossTerms loss_depth_total(Tape& tape, Var pred, const SparseDepthMap& gt,
                                const Tensor& rgb, const PanopticMap& pan,
                                const LossWeights& w) {
  w.validate();
  DepthLossTerms t;
  const LogL1 l1 = loss_log_l1(tape, pred, gt, w);
  t.log_l1 = l1.loss;
  t.n_valid = l1.n_valid;
  t.n_kept = l1.n_kept;
  t.es = loss_edge_smooth(tape, pred, rgb, w.smooth_log_domain);
  t.pes = loss_panoptic_smooth(tape, pred, pan, w.boundary_k, w.smooth_log_domain);
  t.total = diffmath::add(
      diffmath::add(diffmath::muls(t.log_l1, w.lambda_l1),
                    diffmath::muls(t.es, w.lambda_es)),
      diffmath::muls(t.pes, w.lambda_pes));
  return t;
}

Var loss_total(Tape& tape, Var seg, Var cond, Var depth, const LossWeights& w) {
  (void)tape;
  return diffmath::add(
      diffmath::add(diffmath::muls(seg, w.lambda_seg),
                    diffmath::muls(cond, w.lambda_cond)),
      diffmath::muls(depth, w.lambda_depth));
}

}  // namespace dgf::losskit
