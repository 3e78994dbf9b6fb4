#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"
#include "dgf/rng.hpp"

namespace dgf::harness {

namespace fs = std::filesystem;
using diffmath::Tape;
using diffmath::Var;
using fusenet::Model;
using scenegen::MultimodalSample;

void TrainConfig::validate() const {
  if (steps <= 0) throw ContractViolation("steps must be positive");
  if (batch <= 0) throw ContractViolation("batch must be positive");
  if (!(lr > 0.0)) throw ContractViolation("lr must be positive");
  if (!(poly_power > 0.0)) throw ContractViolation("poly_power must be positive");
  if (weight_decay < 0.0) throw ContractViolation("weight_decay must be >= 0");
  if (val_every < 0) throw ContractViolation("val_every must be >= 0");
  if (log_every < 0) throw ContractViolation("log_every must be >= 0");
  model.validate();
  loss.validate();
  if (loss.d_min != model.d_min || loss.d_max != model.d_max)
    throw ContractViolation("loss and model depth ranges must agree");
}

TrainConfig TrainConfig::from_keyval(KeyVal kv) {
  TrainConfig c;
  c.model = fusenet::ModelConfig::from_keyval(kv.take_prefix("model."));
  c.loss = losskit::LossWeights::from_keyval(kv.take_prefix("loss."));
  c.steps = static_cast<int>(kv.take_int("steps", c.steps));
  c.batch = static_cast<int>(kv.take_int("batch", c.batch));
  c.lr = kv.take_double("lr", c.lr);
  c.poly_power = kv.take_double("poly_power", c.poly_power);
  c.weight_decay = kv.take_double("weight_decay", c.weight_decay);
  c.seed = static_cast<std::uint64_t>(kv.take_int("seed", static_cast<std::int64_t>(c.seed)));
  c.val_every = static_cast<int>(kv.take_int("val_every", c.val_every));
  c.log_every = static_cast<int>(kv.take_int("log_every", c.log_every));
  c.data_root = kv.take_string("data_root", c.data_root);
  c.out_dir = kv.take_string("out_dir", c.out_dir);
  c.eval_train = kv.take_bool("eval_train", c.eval_train);
  c.use_smoothness = kv.take_bool("use_smoothness", c.use_smoothness);
  c.use_tau_filter = kv.take_bool("use_tau_filter", c.use_tau_filter);
  kv.finish();
  c.validate();
  return c;
}

losskit::LossReport sample_loss(Tape& tape, const fusenet::ModelOutput& out,
                                const MultimodalSample& s,
                                const TrainConfig& cfg, Var* total) {
  losskit::LossWeights w = cfg.loss;
  if (!cfg.use_tau_filter) w.tau = 1.0;  // keep every residual

  losskit::LossReport rep;
  const Var seg = losskit::loss_seg(tape, out.seg_logits, s.panoptic);
  const Var cond = out.cond_logits.valid()
                       ? losskit::loss_cond(tape, out.cond_logits, s.condition)
                       : tape.scalar(0.0);
  Var depth = tape.scalar(0.0);
  if (out.depth_pred.valid()) {
    if (cfg.use_smoothness) {
      const losskit::DepthLossTerms t =
          losskit::loss_depth_total(tape, out.depth_pred, s.lidar_raw, s.rgb,
                                    s.panoptic, w);
      depth = t.total;
      rep.log_l1 = t.log_l1.item();
      rep.es = t.es.item();
      rep.pes = t.pes.item();
      rep.n_valid = t.n_valid;
      rep.n_kept = t.n_kept;
    } else {
      // smoothness off: the depth loss is the trimmed log-L1 term alone
      const losskit::LogL1 l1 =
          losskit::loss_log_l1(tape, out.depth_pred, s.lidar_raw, w);
      depth = diffmath::muls(l1.loss, w.lambda_l1);
      rep.log_l1 = l1.loss.item();
      rep.n_valid = l1.n_valid;
      rep.n_kept = l1.n_kept;
    }
  }
  const Var sum = losskit::loss_total(tape, seg, cond, depth, w);
  rep.seg = seg.item();
  rep.cond = cond.item();
  rep.depth = depth.item();
  rep.total = sum.item();
  *total = sum;
  return rep;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("short write to " + path.string());
}

nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"miou", m.miou},          {"class_iou", m.class_iou},
          {"depth_mae", m.depth_mae}, {"depth_log_rmse", m.depth_log_rmse},
          {"cond_accuracy", m.cond_accuracy},
          {"mean_loss_total", m.mean_loss_total},
          {"samples", m.samples}};
}

}  // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::vector<MultimodalSample>& train_set,
                  const std::vector<MultimodalSample>& val_set) {
  cfg.validate();
  if (train_set.empty()) throw ContractViolation("training set is empty");

  TrainResult res;
  res.model = Model::build(cfg.model, cfg.seed);
  Model& model = res.model;

  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  opt.init(model.params);

  Rng batch_rng(cfg.seed, "batching");
  const std::size_t nparams = model.params.size();

  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = poly_lr(cfg.lr, step, cfg.steps, cfg.poly_power);

    std::vector<std::vector<double>> grads(nparams);
    for (std::size_t i = 0; i < nparams; ++i)
      grads[i].assign(model.params.at(model.params.order()[i]).numel(), 0.0);

    StepRecord rec;
    rec.step = step;
    rec.lr = lr;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t idx =
          batch_rng.uniform_int(static_cast<std::uint64_t>(train_set.size()));
      const MultimodalSample& s = train_set[idx];

      Tape tape;
      const fusenet::BoundParams bp = model.bind(tape, true);
      const fusenet::ModelOutput out =
          model.forward(tape, bp, s, fusenet::Mode::train);
      Var total;
      const losskit::LossReport lrep = sample_loss(tape, out, s, cfg, &total);
      tape.backward(diffmath::muls(total, 1.0 / cfg.batch));

      for (std::size_t i = 0; i < nparams; ++i) {
        const std::vector<double>& g = tape.grad(bp.leaves[i].id);
        for (std::size_t j = 0; j < g.size(); ++j) grads[i][j] += g[j];
      }
      rec.total += lrep.total / cfg.batch;
      rec.seg += lrep.seg / cfg.batch;
      rec.cond += lrep.cond / cfg.batch;
      rec.depth += lrep.depth / cfg.batch;
    }

    opt.step(model.params, grads, step + 1, lr);
    res.curve.push_back(rec);
    if (cfg.log_every > 0 && (step == 0 || (step + 1) % cfg.log_every == 0))
      std::fprintf(stderr,
                   "step %6d  lr %.3e  total %.5f  seg %.5f  depth %.5f  cond %.5f\n",
                   step, lr, rec.total, rec.seg, rec.depth, rec.cond);

    if (cfg.val_every > 0 && !val_set.empty() && (step + 1) % cfg.val_every == 0 &&
        step + 1 < cfg.steps)
      res.val_history.emplace_back(step + 1, evaluate(model, val_set, cfg));
  }

  if (cfg.eval_train) res.train_metrics = evaluate(model, train_set, cfg);
  if (!val_set.empty()) {
    res.val_metrics = evaluate(model, val_set, cfg);
    res.val_history.emplace_back(cfg.steps, res.val_metrics);
  }

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    res.checkpoint_path = (fs::path(cfg.out_dir) / "model.dgfs").string();
    fusenet::save_checkpoint(res.checkpoint_path, model, cfg.steps);

    nlohmann::json curve = nlohmann::json::array();
    for (const StepRecord& r : res.curve)
      curve.push_back({{"step", r.step},
                       {"lr", r.lr},
                       {"total", r.total},
                       {"seg", r.seg},
                       {"cond", r.cond},
                       {"depth", r.depth}});
    write_text(fs::path(cfg.out_dir) / "curve.json", curve.dump(2) + "\n");

    nlohmann::json mj;
    mj["train"] = metrics_json(res.train_metrics);
    if (!val_set.empty()) {
      mj["val"] = metrics_json(res.val_metrics);
      nlohmann::json hist = nlohmann::json::array();
      for (const auto& [at, m] : res.val_history)
        hist.push_back({{"step", at}, {"metrics", metrics_json(m)}});
      mj["val_history"] = hist;
    }
    write_text(fs::path(cfg.out_dir) / "metrics.json", mj.dump(2) + "\n");
  }
  return res;
}

std::vector<MultimodalSample> load_split(const std::string& root,
                                         const std::string& split) {
  const scenegen::Manifest man = scenegen::load_manifest(root);
  std::vector<MultimodalSample> out;
  for (const scenegen::ManifestEntry& e : man.entries)
    if (e.split == split)
      out.push_back(scenegen::load_sample((fs::path(root) / e.path).string()));
  if (out.empty())
    throw ContractViolation("dataset at " + root + " has no '" + split +
                            "' samples");
  return out;
}

TrainResult train_from_disk(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.data_root.empty())
    throw ContractViolation("train_from_disk needs data_root");
  const scenegen::Manifest man = scenegen::load_manifest(cfg.data_root);
  if (man.height != cfg.model.height || man.width != cfg.model.width)
    throw ContractViolation("dataset size does not match the model config");
  if (man.classes > cfg.model.classes)
    throw ContractViolation("dataset has more classes than the model head");
  if (man.d_min != cfg.model.d_min || man.d_max != cfg.model.d_max)
    throw ContractViolation("dataset depth range does not match the model config");
  const auto train_set = load_split(cfg.data_root, "train");
  std::vector<MultimodalSample> val_set;
  try {
    val_set = load_split(cfg.data_root, "val");
  } catch (const ContractViolation&) {
    // datasets without a val split train blind
  }
  return train(cfg, train_set, val_set);
}

MultimodalSample synthetic_sample(int h, int w, std::uint64_t seed,
                                  int classes) {
  if (h < 1 || w < 1 || classes < 2)
    throw ContractViolation("synthetic_sample needs h,w >= 1 and classes >= 2");
  Rng rng(seed, "synthetic-sample");
  auto plane = [&](double lo, double hi) {
    Tensor t = Tensor::zeros({3, h, w});
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
  };
  MultimodalSample s;
  s.rgb = plane(0.0, 1.0);
  s.lidar_input = plane(0.0, 1.0);
  s.radar_input = plane(0.0, 1.0);
  s.event_input = plane(0.0, 1.0);
  s.depth_true = Tensor::zeros({h, w});
  for (double& v : s.depth_true.data) v = rng.uniform(2.0, 80.0);

  // blocky labels: 4x4 cells, occasional void, one instance per cell
  s.panoptic.height = h;
  s.panoptic.width = w;
  s.panoptic.class_id.assign(static_cast<std::size_t>(h) * w, 0);
  s.panoptic.instance_id.assign(static_cast<std::size_t>(h) * w, 0);
  const int cw = (w + 3) / 4, cells_y = (h + 3) / 4;
  std::vector<std::uint8_t> cell_cls(static_cast<std::size_t>(cw) * cells_y);
  for (auto& c : cell_cls)
    c = rng.bernoulli(0.1)
            ? scenegen::kVoidClass
            : static_cast<std::uint8_t>(rng.uniform_int(
                  static_cast<std::uint64_t>(classes)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t cell =
          static_cast<std::size_t>(y / 4) * cw + static_cast<std::size_t>(x / 4);
      const std::uint8_t c = cell_cls[cell];
      s.panoptic.class_id[static_cast<std::size_t>(y) * w + x] = c;
      s.panoptic.instance_id[static_cast<std::size_t>(y) * w + x] =
          c == scenegen::kVoidClass ? scenegen::kVoidInstance
                                    : static_cast<std::uint16_t>(cell + 1);
    }
  // guarantee a non-void pixel so segmentation loss is defined
  s.panoptic.class_id[0] = 0;
  s.panoptic.instance_id[0] = 1;

  s.lidar_raw.height = h;
  s.lidar_raw.width = w;
  s.lidar_raw.depth.assign(static_cast<std::size_t>(h) * w, 0.0);
  s.lidar_raw.valid.assign(static_cast<std::size_t>(h) * w, 0);
  for (std::size_t i = 0; i < s.lidar_raw.depth.size(); ++i)
    if (rng.bernoulli(0.35)) {
      s.lidar_raw.depth[i] = rng.uniform(2.0, 80.0);
      s.lidar_raw.valid[i] = 1;
    }
  s.lidar_raw.depth[0] = s.depth_true.data[0];
  s.lidar_raw.valid[0] = 1;

  s.condition = scenegen::ConditionLabel::from_index(static_cast<int>(seed % 8));
  s.seed = seed;
  return s;
}

}  // namespace dgf::harness
