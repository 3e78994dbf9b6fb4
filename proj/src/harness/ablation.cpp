#include <cmath>

#include <json.hpp>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"

namespace dgf::harness {

namespace {

void aggregate(const std::vector<double>& xs, double* mean, double* sd) {
  double s = 0.0;
  for (double x : xs) s += x;
  *mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) { *sd = 0.0; return; }
  double q = 0.0;
  for (double x : xs) q += (x - *mean) * (x - *mean);
  *sd = std::sqrt(q / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::vector<AblationRow> run_ablation(
    const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
    const std::vector<scenegen::MultimodalSample>& train_set,
    const std::vector<scenegen::MultimodalSample>& val_set,
    const std::vector<scenegen::MultimodalSample>* loss_val) {
  base.validate();
  if (seeds.empty()) throw ContractViolation("run_ablation needs seeds");
  if (val_set.empty()) throw ContractViolation("run_ablation needs a val set");
  if (loss_val && loss_val->empty())
    throw ContractViolation("loss_val subset is empty");

  std::vector<AblationRow> rows;
  const bool arch_cols[4][3] = {
      {true, false, false}, {true, true, false},
      {false, true, true}, {true, true, true}};
  for (int i = 0; i < 4; ++i) {
    AblationRow r;
    r.table = "arch";
    r.id = i + 1;
    r.ct = arch_cols[i][0];
    r.aux = arch_cols[i][1];
    r.dt = arch_cols[i][2];
    rows.push_back(r);
  }
  const bool loss_cols[4][2] = {
      {false, false}, {true, false}, {false, true}, {true, true}};
  for (int i = 0; i < 4; ++i) {
    AblationRow r;
    r.table = "loss";
    r.id = i + 1;
    r.smooth = loss_cols[i][0];
    r.tau = loss_cols[i][1];
    rows.push_back(r);
  }

  for (AblationRow& r : rows) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.out_dir.clear();  // rows report metrics, only full runs persist
      cfg.val_every = 0;
      cfg.eval_train = false;
      cfg.model.use_ct = r.ct;
      cfg.model.use_aux_depth_head = r.aux;
      cfg.model.use_dt = r.dt;
      cfg.use_smoothness = r.smooth;
      cfg.use_tau_filter = r.tau;
      const std::vector<scenegen::MultimodalSample>& vset =
          (r.table == "loss" && loss_val) ? *loss_val : val_set;
      const TrainResult res = train(cfg, train_set, vset);
      r.miou.push_back(res.val_metrics.miou);
      r.log_rmse.push_back(res.val_metrics.depth_log_rmse);
    }
    aggregate(r.miou, &r.miou_mean, &r.miou_sd);
    aggregate(r.log_rmse, &r.log_rmse_mean, &r.log_rmse_sd);
  }
  return rows;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json j;
    j["table"] = r.table;
    j["row"] = r.id;
    if (r.table == "arch") {
      j["ct"] = r.ct;
      j["aux"] = r.aux;
      j["dt"] = r.dt;
    } else {
      j["smooth"] = r.smooth;
      j["tau"] = r.tau;
    }
    j["miou"] = r.miou;
    j["miou_mean"] = r.miou_mean;
    j["miou_sd"] = r.miou_sd;
    j["log_rmse"] = r.log_rmse;
    j["log_rmse_mean"] = r.log_rmse_mean;
    j["log_rmse_sd"] = r.log_rmse_sd;
    out.push_back(j);
  }
  return out.dump(2) + "\n";
}

}  // namespace dgf::harness
