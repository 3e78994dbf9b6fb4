#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "dgf/errors.hpp"
#include "dgf/fusenet.hpp"
#include "dgf/rng.hpp"

namespace dgf::fusenet {

std::array<std::pair<int, int>, 4> ModelConfig::level_sizes() const {
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0)
    throw ContractViolation("model input size must be a positive multiple of 4, got " +
                            std::to_string(height) + "x" + std::to_string(width));
  std::array<std::pair<int, int>, 4> sizes;
  int h = height / 4, w = width / 4;
  sizes[0] = {h, w};
  for (int l = 1; l < kLevels; ++l) {
    if (h == 1 && w == 1) {
      sizes[l] = {1, 1};
    } else if (h % 2 == 0 && w % 2 == 0) {
      h /= 2;
      w /= 2;
      sizes[l] = {h, w};
    } else {
      throw ContractViolation("level " + std::to_string(l) + " input of " +
                              std::to_string(h) + "x" + std::to_string(w) +
                              " can neither halve nor saturate; pick dims whose "
                              "quarter halves down to 1x1");
    }
  }
  return sizes;
}

void ModelConfig::validate() const {
  level_sizes();  // throws on a bad halving chain
  if (classes < 2 || classes > 200)
    throw ContractViolation("classes must be in [2, 200]");
  for (int l = 0; l < kLevels; ++l) {
    if (widths[l] < 1) throw ContractViolation("level widths must be positive");
    if (widths[l] % bottleneck != 0)
      throw ContractViolation("level width " + std::to_string(widths[l]) +
                              " is not divisible by bottleneck " +
                              std::to_string(bottleneck));
  }
  if (adapter_width < 1) throw ContractViolation("adapter_width must be positive");
  if (window < 2) throw ContractViolation("window must be at least 2");
  if (heads < 1) throw ContractViolation("heads must be positive");
  if (token_width < heads || token_width % heads != 0)
    throw ContractViolation("token_width must be a positive multiple of heads");
  if (bottleneck < 1) throw ContractViolation("bottleneck must be positive");
  if (head_width < 1) throw ContractViolation("head_width must be positive");
  if (fpn_width < 1) throw ContractViolation("fpn_width must be positive");
  if (cond_ffn_mult < 1) throw ContractViolation("cond_ffn_mult must be positive");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ContractViolation("need 0 < d_min < d_max");
}

ModelConfig ModelConfig::from_keyval(KeyVal kv) {
  ModelConfig c;
  c.height = static_cast<int>(kv.take_int("height", c.height));
  c.width = static_cast<int>(kv.take_int("width", c.width));
  c.classes = static_cast<int>(kv.take_int("classes", c.classes));
  c.widths[0] = static_cast<int>(kv.take_int("width_l1", c.widths[0]));
  c.widths[1] = static_cast<int>(kv.take_int("width_l2", c.widths[1]));
  c.widths[2] = static_cast<int>(kv.take_int("width_l3", c.widths[2]));
  c.widths[3] = static_cast<int>(kv.take_int("width_l4", c.widths[3]));
  c.adapter_width = static_cast<int>(kv.take_int("adapter_width", c.adapter_width));
  c.window = static_cast<int>(kv.take_int("window", c.window));
  c.heads = static_cast<int>(kv.take_int("heads", c.heads));
  c.token_width = static_cast<int>(kv.take_int("token_width", c.token_width));
  c.bottleneck = static_cast<int>(kv.take_int("bottleneck", c.bottleneck));
  c.head_width = static_cast<int>(kv.take_int("head_width", c.head_width));
  c.fpn_width = static_cast<int>(kv.take_int("fpn_width", c.fpn_width));
  c.cond_ffn_mult = static_cast<int>(kv.take_int("cond_ffn_mult", c.cond_ffn_mult));
  c.d_min = kv.take_double("d_min", c.d_min);
  c.d_max = kv.take_double("d_max", c.d_max);
  c.use_ct = kv.take_bool("use_ct", c.use_ct);
  c.use_dt = kv.take_bool("use_dt", c.use_dt);
  c.use_aux_depth_head = kv.take_bool("use_aux_depth_head", c.use_aux_depth_head);
  c.use_pos_bias = kv.take_bool("use_pos_bias", c.use_pos_bias);
  kv.finish();
  c.validate();
  return c;
}

std::string ModelConfig::canonical_text() const {
  std::ostringstream os;
  os << "height = " << height << "\n";
  os << "width = " << width << "\n";
  os << "classes = " << classes << "\n";
  for (int l = 0; l < kLevels; ++l)
    os << "width_l" << (l + 1) << " = " << widths[l] << "\n";
  os << "adapter_width = " << adapter_width << "\n";
  os << "window = " << window << "\n";
  os << "heads = " << heads << "\n";
  os << "token_width = " << token_width << "\n";
  os << "bottleneck = " << bottleneck << "\n";
  os << "head_width = " << head_width << "\n";
  os << "fpn_width = " << fpn_width << "\n";
  os << "cond_ffn_mult = " << cond_ffn_mult << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "d_min = %.17g\n", d_min);
  os << buf;
  std::snprintf(buf, sizeof buf, "d_max = %.17g\n", d_max);
  os << buf;
  os << "use_ct = " << (use_ct ? 1 : 0) << "\n";
  os << "use_dt = " << (use_dt ? 1 : 0) << "\n";
  os << "use_aux_depth_head = " << (use_aux_depth_head ? 1 : 0) << "\n";
  os << "use_pos_bias = " << (use_pos_bias ? 1 : 0) << "\n";
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return hash_str(canonical_text()); }

}  // namespace dgf::fusenet
