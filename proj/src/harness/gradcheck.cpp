#include <algorithm>
#include <cmath>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"
#include "dgf/rng.hpp"

namespace dgf::harness {

using diffmath::Tape;
using diffmath::Var;

namespace {

double rel_err(double a, double b) {
  const double scale = std::max({1e-6, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

}  // namespace

GradCheckReport grad_check(std::uint64_t seed,
                           const std::string& corrupt_param) {
  TrainConfig cfg;
  cfg.model.height = 16;
  cfg.model.width = 16;
  cfg.model.classes = 4;
  cfg.model.widths = {4, 8, 16, 32};
  cfg.model.adapter_width = 2;
  cfg.model.token_width = 16;
  cfg.model.heads = 2;
  cfg.model.head_width = 4;
  cfg.model.fpn_width = 8;
  cfg.validate();

  const scenegen::MultimodalSample s =
      synthetic_sample(cfg.model.height, cfg.model.width, seed,
                       cfg.model.classes);
  fusenet::Model model = fusenet::Model::build(cfg.model, seed);
  if (!corrupt_param.empty()) (void)model.params.at(corrupt_param);  // must exist

  Tape tape;
  const fusenet::BoundParams bp = model.bind(tape, true);
  const fusenet::ModelOutput out =
      model.forward(tape, bp, s, fusenet::Mode::train);
  Var total;
  sample_loss(tape, out, s, cfg, &total);
  tape.backward(total);

  auto loss_at = [&](const fusenet::Model& m) {
    Tape t;
    const fusenet::BoundParams b = m.bind(t, false);
    const fusenet::ModelOutput o = m.forward(t, b, s, fusenet::Mode::train);
    Var tot;
    sample_loss(t, o, s, cfg, &tot);
    return tot.item();
  };

  GradCheckReport rep;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const std::string& name = model.params.order()[i];
    const Tensor& p = model.params.at(name);
    const std::vector<double>& g = tape.grad(bp.leaves[i]);
    Rng pick(7, name);
    const std::size_t probes = std::min<std::size_t>(2, p.numel());
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t j = pick.uniform_int(p.numel());
      const double v0 = p.data[j];
      const double h = 1e-5 * std::max(1.0, std::abs(v0));

      fusenet::Model probe = model;
      probe.params.at(name).data[j] = v0 + h;
      const double up = loss_at(probe);
      probe.params.at(name).data[j] = v0 - h;
      const double dn = loss_at(probe);

      const double fd = (up - dn) / (2.0 * h);
      double an = g[j];
      if (name == corrupt_param) an += 1.0;  // deliberate falsification
      const double err = rel_err(an, fd);
      if (err > rep.worst) {
        rep.worst = err;
        rep.worst_param = name;
      }
    }
  }
  rep.pass = rep.worst < 1e-4;
  return rep;
}

}  // namespace dgf::harness
