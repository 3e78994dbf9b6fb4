#pragma once
// Central-difference gradient checking against the tape.
//
// build() assembles a scalar loss from leaf Vars created from `leaves`. The
// backward gradients are compared against (f(x+h)-f(x-h))/2h element by
// element. Relative error uses a small floor so near-zero gradients do not
// blow up the ratio.

#include <cmath>
#include <functional>
#include <vector>

#include "dgf/diffmath.hpp"

namespace dgf::testutil {

using diffmath::Tape;
using diffmath::Tensor;
using diffmath::Var;

using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

// returns max relative error over every element of every leaf
inline double fd_max_rel_err(const BuildFn& build, std::vector<Tensor> leaves,
                             double h = 1e-6) {
  for (Tensor& t : leaves) t.requires_grad = true;

  auto eval = [&](const std::vector<Tensor>& ts) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(ts.size());
    for (const Tensor& t : ts) vars.push_back(tape.leaf(t));
    return build(tape, vars).item();
  };

  // analytic grads
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : leaves) vars.push_back(tape.leaf(t));
  Var loss = build(tape, vars);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const std::size_t n = leaves[li].numel();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Tensor> perturbed = leaves;
      perturbed[li].data[i] += h;
      const double fp = eval(perturbed);
      perturbed[li].data[i] -= 2.0 * h;
      const double fm = eval(perturbed);
      const double fd = (fp - fm) / (2.0 * h);
      const double an =
          tape.has_grad(vars[li].id) ? tape.grad(vars[li].id)[i] : 0.0;
      worst = std::max(worst, rel_err(fd, an));
    }
  }
  return worst;
}

}  // namespace dgf::testutil
