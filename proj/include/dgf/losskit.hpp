#pragma once

// Loss stack for depth-guided fusion training: trimmed log-L1 depth loss,
// edge-aware and panoptic-edge-aware smoothness, segmentation and condition
// cross-entropy, and their weighted combination. Tape variants differentiate;
// the free-standing brute-force versions in losskit_oracle.hpp exist to check
// them and share no code with this file's implementations.

#include <cstdint>
#include <memory>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/keyval.hpp"
#include "dgf/scenegen.hpp"

namespace dgf::losskit {

using diffmath::Tape;
using diffmath::Tensor;
using diffmath::Var;
using scenegen::ConditionLabel;
using scenegen::PanopticMap;
using scenegen::SparseDepthMap;

struct LossWeights {
  double tau = 0.8;
  double lambda_l1 = 0.9;
  double lambda_es = 0.05;
  double lambda_pes = 0.05;
  double lambda_depth = 1.0;
  double lambda_seg = 1.0;
  double lambda_cond = 0.1;
  int boundary_k = 3;
  double d_min = 2.0;
  double d_max = 80.0;
  bool smooth_log_domain = false;

  void validate() const;
  static LossWeights from_keyval(KeyVal kv);
};

// 0/1 weights at difference positions; wx is H x (W-1), wy is (H-1) x W.
struct BoundaryWeights {
  int height = 0, width = 0;
  std::vector<double> wx;
  std::vector<double> wy;
};

// How many of n residuals the trim keeps: ceil(tau*n), evaluated with a
// 1e-12 relative slack so decimal taus whose double sits just above the
// decimal value (0.55*100) do not round an exact integer count upward.
int kept_count(double tau, int n);

// Indices of the kept residuals, ascending; ties keep the smaller index.
std::vector<std::int64_t> tau_filter(const std::vector<double>& r, double tau);

// Boundary weights from panoptic labels: a difference position is suppressed
// when the (class, instance) tuple changes across it or lies within the
// k x k dilation of such a change; any void endpoint also suppresses it.
BoundaryWeights panoptic_boundary_weights(const PanopticMap& pan, int k);

// |log pred - log gt| over valid pixels in row-major order; gt is clamped to
// [d_min, d_max] before the log. Non-positive pred raises DomainError, an
// empty valid set ContractViolation.
struct Residuals {
  Var r;                             // [n_valid]
  std::vector<std::int64_t> pixels;  // flat source indices
};
Residuals log_residuals(Tape& tape, Var pred, const SparseDepthMap& gt,
                        double d_min, double d_max);

struct LogL1 {
  Var loss;
  int n_valid = 0, n_kept = 0;
};
LogL1 loss_log_l1(Tape& tape, Var pred, const SparseDepthMap& gt,
                  const LossWeights& w);

// Mean over H*W of |dx D| e^{-|dx I|} + |dy D| e^{-|dy I|}, forward
// differences, border positions dropped. I is the channel-mean of rgb.
Var loss_edge_smooth(Tape& tape, Var pred, const Tensor& rgb, bool log_domain);

// Same shape of term but weighted by panoptic boundary weights.
Var loss_panoptic_smooth(Tape& tape, Var pred, const PanopticMap& pan, int k,
                         bool log_domain);

// Mean cross-entropy over non-void pixels; all-void raises ContractViolation.
Var loss_seg(Tape& tape, Var logits, const PanopticMap& pan);

// Cross-entropy over the 8 weather x time combinations.
Var loss_cond(Tape& tape, Var logits, ConditionLabel cond);

struct DepthLossTerms {
  Var total, log_l1, es, pes;
  int n_valid = 0, n_kept = 0;
};
DepthLossTerms loss_depth_total(Tape& tape, Var pred, const SparseDepthMap& gt,
                                const Tensor& rgb, const PanopticMap& pan,
                                const LossWeights& w);

Var loss_total(Tape& tape, Var seg, Var cond, Var depth, const LossWeights& w);

struct LossReport {
  double log_l1 = 0, es = 0, pes = 0, depth = 0, seg = 0, cond = 0, total = 0;
  int n_valid = 0, n_kept = 0;
};

}  // namespace dgf::losskit
