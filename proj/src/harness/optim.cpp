#include <cmath>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"

namespace dgf::harness {

double poly_lr(double base, int step, int total_steps, double power) {
  if (total_steps <= 0) throw ContractViolation("schedule needs total_steps > 0");
  if (step < 0 || step > total_steps)
    throw ContractViolation("schedule step outside [0, total_steps]");
  if (!(base > 0.0) || !(power > 0.0))
    throw ContractViolation("schedule needs base > 0 and power > 0");
  const double frac = 1.0 - static_cast<double>(step) / total_steps;
  return base * std::pow(frac, power);
}

void AdamW::init(const fusenet::ParamStore& params) {
  m_.assign(params.size(), {});
  v_.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params.at(params.order()[i]).numel();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void AdamW::step(fusenet::ParamStore& params,
                 const std::vector<std::vector<double>>& grads, int t,
                 double lr) {
  if (m_.size() != params.size())
    throw ContractViolation("optimizer state does not match the param store");
  if (grads.size() != params.size())
    throw ContractViolation("gradient list does not match the param store");
  if (t < 1) throw ContractViolation("optimizer step counter is 1-based");

  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.order()[i];
    Tensor& p = params.at(name);
    const std::vector<double>& g = grads[i];
    if (g.size() != p.numel())
      throw ContractViolation("gradient size mismatch for '" + name + "'");
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw DomainError("non-finite gradient in parameter '" + name +
                          "' at optimizer step " + std::to_string(t));
      m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
      v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[j]);
    }
  }
}

}  // namespace dgf::harness
