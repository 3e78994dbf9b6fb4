#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dgf/blockfile.hpp"
#include "dgf/errors.hpp"
#include "dgf/fusenet.hpp"
#include "dgf/rng.hpp"

namespace dgf::fusenet {

namespace {

std::size_t find_index(const std::vector<std::string>& order,
                       const std::string& name) {
  const auto it = std::find(order.begin(), order.end(), name);
  return it == order.end() ? order.size()
                           : static_cast<std::size_t>(it - order.begin());
}

}  // namespace

void ParamStore::add(const std::string& name, Tensor t) {
  if (name.empty() || name.size() > 255)
    throw ContractViolation("parameter name must be 1..255 bytes");
  if (find_index(order_, name) != order_.size())
    throw ContractViolation("duplicate parameter '" + name + "'");
  order_.push_back(name);
  values_.push_back(std::move(t));
}

bool ParamStore::has(const std::string& name) const {
  return find_index(order_, name) != order_.size();
}

Tensor& ParamStore::at(const std::string& name) {
  const std::size_t i = find_index(order_, name);
  if (i == order_.size())
    throw ContractViolation("unknown parameter '" + name + "'");
  return values_[i];
}

const Tensor& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::index(const std::string& name) const {
  const std::size_t i = find_index(order_, name);
  if (i == order_.size())
    throw ContractViolation("unknown parameter '" + name + "'");
  return i;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.numel();
  return n;
}

namespace {

Tensor randn_tensor(std::uint64_t seed, const std::string& name, Shape shape,
                    double stddev) {
  Rng rng(seed, name);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

struct Init {
  ParamStore* store;
  std::uint64_t seed;

  // fan-in scaled normals; convs count the whole receptive field
  void conv(const std::string& name, int co, int ci, int k, double scale = 1.0) {
    store->add(name, randn_tensor(seed, name, {co, ci, k, k},
                                  scale * std::sqrt(2.0 / (ci * k * k))));
  }
  void linear(const std::string& name, int in, int out, double scale = 1.0) {
    store->add(name,
               randn_tensor(seed, name, {in, out}, scale * std::sqrt(2.0 / in)));
  }
  void randn(const std::string& name, Shape shape, double stddev) {
    store->add(name, randn_tensor(seed, name, std::move(shape), stddev));
  }
  void zeros(const std::string& name, Shape shape) {
    store->add(name, Tensor::zeros(std::move(shape)));
  }
  void ones(const std::string& name, Shape shape) {
    store->add(name, Tensor::full(std::move(shape), 1.0));
  }
};

void add_cond_layer(Init& in, const std::string& prefix, int ct, int ffn) {
  in.linear(prefix + ".wq", ct, ct);
  in.linear(prefix + ".wk", ct, ct);
  in.linear(prefix + ".wv", ct, ct);
  in.linear(prefix + ".wo", ct, ct);
  in.ones(prefix + ".ln1.g", {ct});
  in.zeros(prefix + ".ln1.b", {ct});
  in.linear(prefix + ".ffn.w1", ct, ffn);
  in.zeros(prefix + ".ffn.b1", {ffn});
  in.linear(prefix + ".ffn.w2", ffn, ct);
  in.zeros(prefix + ".ffn.b2", {ct});
  in.ones(prefix + ".ln2.g", {ct});
  in.zeros(prefix + ".ln2.b", {ct});
}

}  // namespace

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Init in{&m.params, seed};

  const auto sizes = cfg.level_sizes();
  const int ct = cfg.token_width;
  const int kw = cfg.window;

  for (const char* mod : kModalities) {
    in.conv(std::string("adapter.") + mod + ".w", cfg.adapter_width, 3, 1);
    in.zeros(std::string("adapter.") + mod + ".b", {cfg.adapter_width});
  }

  in.conv("backbone.stem.w", cfg.widths[0], 16 * cfg.adapter_width, 3);
  for (int l = 1; l < kLevels; ++l) {
    const auto prev = sizes[l - 1];
    const std::string name = "backbone.stage" + std::to_string(l + 1) + ".w";
    if (prev.first == 1 && prev.second == 1)
      in.conv(name, cfg.widths[l], cfg.widths[l - 1], 1);
    else
      in.conv(name, cfg.widths[l], 4 * cfg.widths[l - 1], 3);
  }

  if (cfg.needs_depth_pyramid()) {
    for (int l = 0; l < kLevels; ++l) {
      const std::string p = "dfuse.l" + std::to_string(l + 1);
      const int c = cfg.widths[l];
      const int mid = c / cfg.bottleneck;
      in.linear(p + ".w1", 4 * c, mid);
      in.zeros(p + ".b1", {mid});
      in.linear(p + ".w2", mid, c);
      in.zeros(p + ".b2", {c});
    }
  }

  if (cfg.use_dt) {
    for (int l = 0; l < kLevels; ++l) {
      const std::string p = "dt.l" + std::to_string(l + 1);
      in.conv(p + ".w", ct, cfg.widths[l], 3);
      in.zeros(p + ".b", {ct});
    }
  }

  if (cfg.use_ct) {
    in.linear("cond.embed.w", cfg.widths[3], ct);
    in.zeros("cond.embed.b", {ct});
    add_cond_layer(in, "cond.enc1", ct, cfg.cond_ffn_mult * ct);
    add_cond_layer(in, "cond.enc2", ct, cfg.cond_ffn_mult * ct);
    in.randn("cond.query", {1, ct}, 0.02);
    add_cond_layer(in, "cond.dec1", ct, cfg.cond_ffn_mult * ct);
    add_cond_layer(in, "cond.dec2", ct, cfg.cond_ffn_mult * ct);
    in.linear("cond.cls.w", ct, kCondClasses);
    in.zeros("cond.cls.b", {kCondClasses});
  }

  for (int l = 0; l < kLevels; ++l) {
    for (int s = 1; s < 4; ++s) {
      const std::string p =
          "fuse.l" + std::to_string(l + 1) + "." + kModalities[s];
      const int c = cfg.widths[l];
      in.linear(p + ".q.w", c, ct);
      in.zeros(p + ".q.b", {ct});
      in.linear(p + ".kv.w", c, ct);
      in.zeros(p + ".kv.b", {ct});
      in.linear(p + ".wq", ct, ct);
      in.linear(p + ".wk", ct, ct);
      in.linear(p + ".wv", ct, ct);
      // damped but nonzero so fusion contributes from the first step
      in.linear(p + ".wo", ct, c, 0.1);
      if (cfg.use_pos_bias) {
        in.randn(p + ".pos_q", {kw * kw, ct}, 0.02);
        in.randn(p + ".pos_k", {kw * kw, ct}, 0.02);
      }
    }
  }

  if (cfg.use_aux_depth_head) {
    for (int l = 0; l < kLevels; ++l) {
      const std::string p = "head.l" + std::to_string(l + 1);
      in.conv(p + ".w", cfg.head_width, cfg.widths[l], 3);
      in.zeros(p + ".b", {cfg.head_width});
    }
    in.conv("head.proj.w", 1, cfg.head_width, 1);
    in.zeros("head.proj.b", {1});
  }

  for (int l = 0; l < kLevels; ++l)
    in.conv("seg.lat" + std::to_string(l + 1) + ".w", cfg.fpn_width,
            cfg.widths[l], 1);
  in.conv("seg.mix.w", cfg.fpn_width, cfg.fpn_width, 3);
  in.conv("seg.cls.w", cfg.classes, cfg.fpn_width, 1);
  in.zeros("seg.cls.b", {cfg.classes});

  return m;
}

BoundParams Model::bind(Tape& tape, bool trainable) const {
  BoundParams bp;
  bp.leaves.reserve(params.size());
  for (const std::string& name : params.order()) {
    Tensor t = params.at(name);
    t.requires_grad = trainable;
    bp.leaves.push_back(tape.leaf(std::move(t)));
  }
  return bp;
}

Var Model::pvar(const BoundParams& bp, const std::string& name) const {
  return bp.leaves.at(params.index(name));
}

void save_checkpoint(const std::string& path, const Model& model,
                     std::int64_t step) {
  blockfile::Container c;
  c.height = static_cast<std::uint32_t>(model.cfg.height);
  c.width = static_cast<std::uint32_t>(model.cfg.width);

  char meta[96];
  std::snprintf(meta, sizeof meta, "config_hash = %016llx\nstep = %lld\n",
                static_cast<unsigned long long>(model.cfg.hash()),
                static_cast<long long>(step));
  const std::string text(meta);
  c.arrays.push_back(blockfile::Array::of_u8(
      "meta", {static_cast<int>(text.size())},
      std::vector<std::uint8_t>(text.begin(), text.end())));

  for (const std::string& name : model.params.order()) {
    const Tensor& t = model.params.at(name);
    c.arrays.push_back(blockfile::Array::of_f64(name, t.shape, t.data));
  }
  blockfile::write_file(path, c);
}

std::int64_t load_checkpoint(const std::string& path, Model& model) {
  const blockfile::Container c = blockfile::read_file(path);

  const blockfile::Array& meta = c.require("meta");
  if (meta.dtype != blockfile::DType::u8)
    throw IoError(path + ": metadata block has the wrong dtype");
  KeyVal kv = KeyVal::parse(std::string(meta.u8.begin(), meta.u8.end()), path);
  const std::string stored_hash = kv.take_string("config_hash", "");
  const std::int64_t step = kv.take_int("step", -1);
  kv.finish();
  if (step < 0) throw IoError(path + ": checkpoint metadata lacks a step count");

  char want[32];
  std::snprintf(want, sizeof want, "%016llx",
                static_cast<unsigned long long>(model.cfg.hash()));
  if (stored_hash != want)
    throw ContractViolation(path + ": checkpoint config hash " + stored_hash +
                            " does not match the model's " + want);

  if (c.arrays.size() != model.params.size() + 1)
    throw ContractViolation(
        path + ": checkpoint parameter set does not match the model (" +
        std::to_string(c.arrays.size() - 1) + " stored, " +
        std::to_string(model.params.size()) + " expected)");
  for (const std::string& name : model.params.order()) {
    const blockfile::Array& a = c.require(name);
    Tensor& t = model.params.at(name);
    if (a.dtype != blockfile::DType::f64 || a.dims != t.shape)
      throw ContractViolation(path + ": parameter '" + name +
                              "' has mismatched dtype or shape");
    t.data = a.f64;
  }
  return step;
}

}  // namespace dgf::fusenet
