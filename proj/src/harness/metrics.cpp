#include <cmath>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"

namespace dgf::harness {

void ConfusionMatrix::add(int gt, int pred) {
  if (gt < 0 || gt >= classes || pred < 0 || pred >= classes)
    throw ContractViolation("confusion matrix index outside [0, classes)");
  ++counts[static_cast<std::size_t>(gt) * classes + pred];
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  const int c = cm.classes;
  std::vector<double> iou(static_cast<std::size_t>(c), -1.0);
  for (int k = 0; k < c; ++k) {
    std::int64_t tp = cm.counts[static_cast<std::size_t>(k) * c + k];
    std::int64_t fn = 0, fp = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += cm.counts[static_cast<std::size_t>(k) * c + j];
      fp += cm.counts[static_cast<std::size_t>(j) * c + k];
    }
    const std::int64_t denom = tp + fp + fn;
    // classes absent from both prediction and ground truth stay excluded
    if (denom > 0)
      iou[static_cast<std::size_t>(k)] =
          static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double mean_iou(const ConfusionMatrix& cm) {
  const std::vector<double> iou = per_class_iou(cm);
  double sum = 0.0;
  int n = 0;
  for (double v : iou)
    if (v >= 0.0) {
      sum += v;
      ++n;
    }
  if (n == 0) throw ContractViolation("mean IoU over zero observed classes");
  return sum / n;
}

MetricsReport evaluate(const fusenet::Model& model,
                       const std::vector<scenegen::MultimodalSample>& set,
                       const TrainConfig& cfg) {
  if (set.empty()) throw ContractViolation("evaluation set is empty");
  const int classes = model.cfg.classes;
  ConfusionMatrix cm(classes);

  MetricsReport rep;
  double abs_sum = 0.0, log_sq_sum = 0.0;
  std::int64_t depth_px = 0;
  int cond_hits = 0, cond_total = 0;
  bool any_depth = false;

  for (const scenegen::MultimodalSample& s : set) {
    diffmath::Tape tape;
    const fusenet::BoundParams bp = model.bind(tape, false);
    const fusenet::ModelOutput out =
        model.forward(tape, bp, s, fusenet::Mode::train);
    diffmath::Var total;
    const losskit::LossReport lr = sample_loss(tape, out, s, cfg, &total);
    rep.mean_loss_total += lr.total;

    const int h = model.cfg.height, w = model.cfg.width;
    const auto& seg = out.seg_logits.data();
    for (int p = 0; p < h * w; ++p) {
      const std::uint8_t gt = s.panoptic.class_id[static_cast<std::size_t>(p)];
      if (gt == scenegen::kVoidClass) continue;
      if (gt >= classes)
        throw ContractViolation("label class " + std::to_string(gt) +
                                " exceeds the model's " +
                                std::to_string(classes) + " classes");
      int best = 0;
      double best_v = seg[static_cast<std::size_t>(p)];
      for (int k = 1; k < classes; ++k) {
        const double v = seg[static_cast<std::size_t>(k) * h * w + p];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      cm.add(gt, best);
    }

    if (out.depth_pred.valid()) {
      any_depth = true;
      const auto& d = out.depth_pred.data();
      for (int p = 0; p < h * w; ++p) {
        if (!s.lidar_raw.valid[static_cast<std::size_t>(p)]) continue;
        const double truth = s.depth_true.data[static_cast<std::size_t>(p)];
        abs_sum += std::fabs(d[static_cast<std::size_t>(p)] - truth);
        const double dl = std::log(d[static_cast<std::size_t>(p)]) - std::log(truth);
        log_sq_sum += dl * dl;
        ++depth_px;
      }
    }
    if (out.cond_logits.valid()) {
      const auto& cl = out.cond_logits.data();
      int best = 0;
      for (int k = 1; k < fusenet::kCondClasses; ++k)
        if (cl[static_cast<std::size_t>(k)] > cl[static_cast<std::size_t>(best)])
          best = k;
      cond_hits += best == s.condition.index() ? 1 : 0;
      ++cond_total;
    }
  }

  rep.samples = static_cast<int>(set.size());
  rep.mean_loss_total /= rep.samples;
  rep.class_iou = per_class_iou(cm);
  rep.miou = mean_iou(cm);
  if (any_depth && depth_px > 0) {
    rep.depth_mae = abs_sum / static_cast<double>(depth_px);
    rep.depth_log_rmse = std::sqrt(log_sq_sum / static_cast<double>(depth_px));
  } else {
    rep.depth_mae = -1.0;
    rep.depth_log_rmse = -1.0;
  }
  rep.cond_accuracy =
      cond_total > 0 ? static_cast<double>(cond_hits) / cond_total : -1.0;
  return rep;
}

}  // namespace dgf::harness
