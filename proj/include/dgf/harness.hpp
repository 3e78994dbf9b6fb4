#pragma once

// Training and evaluation around the fusion model: AdamW with a polynomial
// learning-rate decay, deterministic batched training with per-sample tapes,
// confusion-matrix metrics, the eight-row ablation runner, and a
// finite-difference gradient audit. Every run is a pure function of
// (config, seed); reports and checkpoints reproduce byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "dgf/fusenet.hpp"
#include "dgf/keyval.hpp"
#include "dgf/losskit.hpp"
#include "dgf/scenegen.hpp"

namespace dgf::harness {

using diffmath::Tensor;

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  double poly_power = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  int val_every = 1000;  // 0 disables mid-run validation
  int log_every = 0;     // >0 prints step losses to stderr
  std::string data_root;
  std::string out_dir;
  bool eval_train = true;       // final metrics pass over the training set
  bool use_smoothness = true;   // include the edge/panoptic smoothness terms
  bool use_tau_filter = true;   // trim depth residuals; off keeps every pixel
  fusenet::ModelConfig model;
  losskit::LossWeights loss;

  void validate() const;
  // Flat file; model.* and loss.* prefixes route to the nested configs.
  static TrainConfig from_keyval(KeyVal kv);
};

double poly_lr(double base, int step, int total_steps, double power);

// Decoupled-weight-decay Adam over the parameter store. Gradients arrive as
// one vector per parameter tensor, aligned with the store order.
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  void init(const fusenet::ParamStore& params);
  // t is 1-based; throws DomainError naming the parameter on non-finite grads
  void step(fusenet::ParamStore& params,
            const std::vector<std::vector<double>>& grads, int t, double lr);

 private:
  std::vector<std::vector<double>> m_, v_;
};

struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // classes x classes, row = ground truth

  explicit ConfusionMatrix(int c = 0)
      : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}
  void add(int gt, int pred);
};

// Per-class IoU; classes absent from both sides carry -1 and are excluded
// from the mean.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);
double mean_iou(const ConfusionMatrix& cm);

struct MetricsReport {
  double miou = 0.0;
  std::vector<double> class_iou;
  double depth_mae = 0.0;       // vs clean depth on lidar-valid pixels
  double depth_log_rmse = 0.0;
  double cond_accuracy = 0.0;   // -1 when the condition head is absent
  double mean_loss_total = 0.0;
  int samples = 0;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double total = 0.0, seg = 0.0, cond = 0.0, depth = 0.0;
};

struct TrainResult {
  fusenet::Model model;
  std::vector<StepRecord> curve;
  std::vector<std::pair<int, MetricsReport>> val_history;
  MetricsReport train_metrics, val_metrics;
  std::string checkpoint_path;  // empty when out_dir is empty
};

// Builds the per-sample loss graph honoring the loss toggles; disabled terms
// are absent from the graph, not multiplied away.
losskit::LossReport sample_loss(diffmath::Tape& tape,
                                const fusenet::ModelOutput& out,
                                const scenegen::MultimodalSample& s,
                                const TrainConfig& cfg, diffmath::Var* total);

TrainResult train(const TrainConfig& cfg,
                  const std::vector<scenegen::MultimodalSample>& train_set,
                  const std::vector<scenegen::MultimodalSample>& val_set);
// Loads samples of the manifest under cfg.data_root, then trains.
TrainResult train_from_disk(const TrainConfig& cfg);

MetricsReport evaluate(const fusenet::Model& model,
                       const std::vector<scenegen::MultimodalSample>& set,
                       const TrainConfig& cfg);

std::vector<scenegen::MultimodalSample> load_split(const std::string& root,
                                                   const std::string& split);

// One Table-IV/V style configuration row.
struct AblationRow {
  std::string table;  // "arch" or "loss"
  int id = 0;
  bool ct = true, aux = true, dt = true;        // arch columns
  bool smooth = true, tau = true;               // loss columns
  std::vector<double> miou, log_rmse;           // one entry per seed
  double miou_mean = 0.0, miou_sd = 0.0;
  double log_rmse_mean = 0.0, log_rmse_sd = 0.0;
};

// Trains the 4 architecture rows and the 4 loss rows per seed and aggregates
// mean and stddev of the validation metrics. Loss rows evaluate on loss_val
// when given (the corrupted-condition subset), otherwise on val_set.
std::vector<AblationRow> run_ablation(
    const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
    const std::vector<scenegen::MultimodalSample>& train_set,
    const std::vector<scenegen::MultimodalSample>& val_set,
    const std::vector<scenegen::MultimodalSample>* loss_val = nullptr);
std::string ablation_json(const std::vector<AblationRow>& rows);

struct GradCheckReport {
  double worst = 0.0;
  std::string worst_param;
  bool pass = false;
};

// Finite-difference audit of the full training loss on a tiny model; probes
// every parameter group. corrupt_param deliberately falsifies that
// parameter's analytic gradient so the audit's failure path stays honest.
GradCheckReport grad_check(std::uint64_t seed,
                           const std::string& corrupt_param = "");

// Random inputs with plausible labels at any size; forward-compatible stand-in
// for generator output where the generator's size constraints do not fit.
scenegen::MultimodalSample synthetic_sample(int h, int w, std::uint64_t seed,
                                            int classes);

}  // namespace dgf::harness
