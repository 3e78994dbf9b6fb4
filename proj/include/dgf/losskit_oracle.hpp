#pragma once

// Brute-force scalar evaluations of every loss, written as direct double
// loops with no shared code paths into losskit.cpp. Used by the tests and by
// the `losskit oracle` comparison suite.

#include <iosfwd>
#include <vector>

#include "dgf/losskit.hpp"

namespace dgf::losskit::oracle {

double log_l1(const std::vector<double>& pred, const SparseDepthMap& gt,
              double tau, double d_min, double d_max, int* n_valid = nullptr,
              int* n_kept = nullptr);

double edge_smooth(const std::vector<double>& pred,
                   const std::vector<double>& rgb, int h, int w,
                   bool log_domain);

BoundaryWeights boundary_weights(const PanopticMap& pan, int k);

double panoptic_smooth(const std::vector<double>& pred, const PanopticMap& pan,
                       int k, bool log_domain);

double seg_ce(const std::vector<double>& logits, int classes,
              const PanopticMap& pan);

double cond_ce(const std::vector<double>& logits, int label);

// Runs seeded random comparisons of every loss against its tape counterpart
// and returns the largest absolute deviation seen. Prints a per-loss summary
// to `out` when non-null.
double run_comparison_suite(int cases_per_loss, std::ostream* out);

}  // namespace dgf::losskit::oracle
