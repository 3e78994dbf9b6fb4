#include <algorithm>
#include <cmath>
#include <ostream>

#include "dgf/errors.hpp"
#include "dgf/losskit_oracle.hpp"
#include "dgf/rng.hpp"

namespace dgf::losskit::oracle {

double log_l1(const std::vector<double>& pred, const SparseDepthMap& gt,
              double tau, double d_min, double d_max, int* n_valid,
              int* n_kept) {
  std::vector<std::pair<double, std::size_t>> residuals;
  for (std::size_t i = 0; i < gt.valid.size(); ++i) {
    if (!gt.valid[i]) continue;
    double g = gt.depth[i];
    if (g < d_min) g = d_min;
    if (g > d_max) g = d_max;
    if (!(pred[i] > 0.0))
      throw DomainError("non-positive depth prediction");
    residuals.emplace_back(std::fabs(std::log(pred[i]) - std::log(g)), i);
  }
  if (residuals.empty())
    throw ContractViolation("no valid depth pixels to supervise");
  const int n = static_cast<int>(residuals.size());
  // same pinned rounding rule, restated here on purpose
  int k = static_cast<int>(std::ceil(tau * static_cast<double>(n) * (1.0 - 1e-12)));
  k = std::min(n, std::max(1, k));
  std::sort(residuals.begin(), residuals.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first < b.first;
              return a.second < b.second;
            });
  residuals.resize(static_cast<std::size_t>(k));
  std::sort(residuals.begin(), residuals.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  double acc = 0.0;
  for (const auto& [r, i] : residuals) acc += r;
  if (n_valid) *n_valid = n;
  if (n_kept) *n_kept = k;
  return acc / k;
}

double edge_smooth(const std::vector<double>& pred,
                   const std::vector<double>& rgb, int h, int w,
                   bool log_domain) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto dval = [&](std::size_t i) {
    return log_domain ? std::log(pred[i]) : pred[i];
  };
  auto ival = [&](std::size_t i) {
    return (rgb[i] + rgb[plane + i] + rgb[2 * plane + i]) / 3.0;
  };
  double ax = 0.0, ay = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ax += std::fabs(dval(i + 1) - dval(i)) *
            std::exp(-std::fabs(ival(i + 1) - ival(i)));
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ay += std::fabs(dval(i + w) - dval(i)) *
            std::exp(-std::fabs(ival(i + w) - ival(i)));
    }
  return (ax + ay) / (static_cast<double>(h) * w);
}

BoundaryWeights boundary_weights(const PanopticMap& pan, int k) {
  const int h = pan.height, w = pan.width;
  const int r = k / 2;
  BoundaryWeights bw;
  bw.height = h;
  bw.width = w;
  auto tuple_same = [&](int y0, int x0, int y1, int x1) {
    const std::size_t a = static_cast<std::size_t>(y0) * w + x0;
    const std::size_t b = static_cast<std::size_t>(y1) * w + x1;
    return pan.class_id[a] == pan.class_id[b] &&
           pan.instance_id[a] == pan.instance_id[b];
  };
  auto both_nonvoid = [&](int y0, int x0, int y1, int x1) {
    const std::size_t a = static_cast<std::size_t>(y0) * w + x0;
    const std::size_t b = static_cast<std::size_t>(y1) * w + x1;
    return pan.class_id[a] != scenegen::kVoidClass &&
           pan.class_id[b] != scenegen::kVoidClass;
  };

  if (w > 1) {
    bw.wx.assign(static_cast<std::size_t>(h) * (w - 1), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w - 1; ++x) {
        // dilated boundary test: any difference inside the k x k window
        bool boundary_near = false;
        for (int dy = -r; dy <= r && !boundary_near; ++dy)
          for (int dx = -r; dx <= r && !boundary_near; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w - 1) continue;
            if (!tuple_same(yy, xx, yy, xx + 1)) boundary_near = true;
          }
        const double v = both_nonvoid(y, x, y, x + 1) ? 1.0 : 0.0;
        bw.wx[static_cast<std::size_t>(y) * (w - 1) + x] =
            boundary_near ? 0.0 : v;
      }
  }
  if (h > 1) {
    bw.wy.assign(static_cast<std::size_t>(h - 1) * w, 0.0);
    for (int y = 0; y < h - 1; ++y)
      for (int x = 0; x < w; ++x) {
        bool boundary_near = false;
        for (int dy = -r; dy <= r && !boundary_near; ++dy)
          for (int dx = -r; dx <= r && !boundary_near; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h - 1 || xx < 0 || xx >= w) continue;
            if (!tuple_same(yy, xx, yy + 1, xx)) boundary_near = true;
          }
        const double v = both_nonvoid(y, x, y + 1, x) ? 1.0 : 0.0;
        bw.wy[static_cast<std::size_t>(y) * w + x] = boundary_near ? 0.0 : v;
      }
  }
  return bw;
}

double panoptic_smooth(const std::vector<double>& pred, const PanopticMap& pan,
                       int k, bool log_domain) {
  const BoundaryWeights bw = boundary_weights(pan, k);
  const int h = pan.height, w = pan.width;
  auto dval = [&](std::size_t i) {
    return log_domain ? std::log(pred[i]) : pred[i];
  };
  double ax = 0.0, ay = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ax += bw.wx[static_cast<std::size_t>(y) * (w - 1) + x] *
            std::fabs(dval(i + 1) - dval(i));
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ay += bw.wy[i] * std::fabs(dval(i + w) - dval(i));
    }
  return (ax + ay) / (static_cast<double>(h) * w);
}

double seg_ce(const std::vector<double>& logits, int classes,
              const PanopticMap& pan) {
  const std::size_t plane =
      static_cast<std::size_t>(pan.height) * pan.width;
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    const int cls = pan.class_id[i];
    if (cls == scenegen::kVoidClass) continue;
    double m = logits[i];
    for (int c = 1; c < classes; ++c)
      m = std::max(m, logits[static_cast<std::size_t>(c) * plane + i]);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c)
      sum += std::exp(logits[static_cast<std::size_t>(c) * plane + i] - m);
    acc += std::log(sum) + m -
           logits[static_cast<std::size_t>(cls) * plane + i];
    ++count;
  }
  if (count == 0)
    throw ContractViolation("all pixels are void; segmentation loss undefined");
  return acc / count;
}

double cond_ce(const std::vector<double>& logits, int label) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  return std::log(sum) + m - logits[static_cast<std::size_t>(label)];
}

namespace {

PanopticMap random_panoptic(Rng& rng, int h, int w, int classes) {
  PanopticMap pan;
  pan.height = h;
  pan.width = w;
  pan.class_id.resize(static_cast<std::size_t>(h) * w);
  pan.instance_id.resize(pan.class_id.size());
  // blocky labels exercise boundaries; sprinkle voids and same-class
  // neighboring instances
  const int cell = 1 + static_cast<int>(rng.uniform_int(0, 3));
  const std::uint64_t salt = rng.next_u64();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      Rng cellrng(static_cast<std::uint64_t>(y / cell) * 7919 +
                  static_cast<std::uint64_t>(x / cell) * 104729 + salt);
      pan.class_id[i] = static_cast<std::uint8_t>(cellrng.uniform_int(
          0, classes - 1));
      pan.instance_id[i] =
          static_cast<std::uint16_t>(1 + cellrng.uniform_int(0, 2));
    }
  const int voids = static_cast<int>(rng.uniform_int(0, 8));
  for (int v = 0; v < voids; ++v) {
    const std::size_t i = rng.uniform_int(pan.class_id.size());
    pan.class_id[i] = scenegen::kVoidClass;
    pan.instance_id[i] = scenegen::kVoidInstance;
  }
  return pan;
}

}  // namespace

double run_comparison_suite(int cases_per_loss, std::ostream* out) {
  using diffmath::Shape;
  using diffmath::Tape;
  double worst = 0.0;
  auto report = [&](const char* name, double dev) {
    worst = std::max(worst, dev);
    if (out) *out << name << ": max abs deviation " << dev << "\n";
  };

  double dev_l1 = 0.0, dev_es = 0.0, dev_pes = 0.0, dev_seg = 0.0,
         dev_cond = 0.0;
  for (int cse = 0; cse < cases_per_loss; ++cse) {
    Rng rng(1000 + static_cast<std::uint64_t>(cse), "loss-suite");
    const int h = 8 + static_cast<int>(rng.uniform_int(0, 24));
    const int w = 8 + static_cast<int>(rng.uniform_int(0, 24));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double d_min = 2.0, d_max = 80.0;
    const double tau = cse % 3 == 0 ? 1.0 : 0.8;

    std::vector<double> pred(plane);
    for (double& v : pred) v = rng.uniform(d_min * 0.5, d_max * 1.2);
    SparseDepthMap gt;
    gt.height = h;
    gt.width = w;
    gt.depth.assign(plane, 0.0);
    gt.valid.assign(plane, 0);
    for (std::size_t i = 0; i < plane; ++i)
      if (rng.bernoulli(0.3)) {
        gt.valid[i] = 1;
        gt.depth[i] = rng.uniform(d_min * 0.2, d_max * 1.1);
      }
    if (gt.valid_fraction() == 0.0) gt.valid[0] = 1, gt.depth[0] = 10.0;

    std::vector<double> rgb(3 * plane);
    for (double& v : rgb) v = rng.uniform(0.0, 1.0);
    const PanopticMap pan = random_panoptic(rng, h, w, 5);

    LossWeights lw;
    lw.tau = tau;
    {
      Tape tape;
      Var p = tape.leaf(Shape{h, w}, pred);
      const LogL1 got = loss_log_l1(tape, p, gt, lw);
      dev_l1 = std::max(dev_l1, std::fabs(got.loss.item() -
                                          log_l1(pred, gt, tau, d_min, d_max)));
    }
    {
      Tape tape;
      Var p = tape.leaf(Shape{h, w}, pred);
      Tensor rgbt = Tensor::from(Shape{3, h, w}, rgb);
      const double got = loss_edge_smooth(tape, p, rgbt, false).item();
      dev_es = std::max(dev_es, std::fabs(got - edge_smooth(pred, rgb, h, w, false)));
    }
    {
      Tape tape;
      Var p = tape.leaf(Shape{h, w}, pred);
      const double got = loss_panoptic_smooth(tape, p, pan, 3, false).item();
      dev_pes =
          std::max(dev_pes, std::fabs(got - panoptic_smooth(pred, pan, 3, false)));
    }
    {
      std::vector<double> logits(5 * plane);
      for (double& v : logits) v = rng.uniform(-4.0, 4.0);
      Tape tape;
      Var l = tape.leaf(Shape{5, h, w}, logits);
      const double got = loss_seg(tape, l, pan).item();
      dev_seg = std::max(dev_seg, std::fabs(got - seg_ce(logits, 5, pan)));
    }
    {
      std::vector<double> logits(8);
      for (double& v : logits) v = rng.uniform(-4.0, 4.0);
      const int label = static_cast<int>(rng.uniform_int(8));
      Tape tape;
      Var l = tape.leaf(Shape{8}, logits);
      const double got =
          loss_cond(tape, l, ConditionLabel::from_index(label)).item();
      dev_cond = std::max(dev_cond, std::fabs(got - cond_ce(logits, label)));
    }
  }
  report("log_l1", dev_l1);
  report("edge_smooth", dev_es);
  report("panoptic_smooth", dev_pes);
  report("seg_ce", dev_seg);
  report("cond_ce", dev_cond);
  return worst;
}

}  // namespace dgf::losskit::oracle
