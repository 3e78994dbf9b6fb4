#pragma once

// Multimodal fusion model: per-modality adapters in front of a shared
// backbone, a depth pyramid fused from all modalities, window-level
// cross-attention from RGB queries (plus depth and condition tokens) onto
// each secondary modality, an FPN-style segmentation head, a train-only
// depth head, and a condition classifier. All parameters live in a
// name-keyed store; each tensor is initialized from its own seeded stream
// so structural toggles never shift the initialization of the rest.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/keyval.hpp"
#include "dgf/scenegen.hpp"

namespace dgf::fusenet {

using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;
using diffmath::Var;

inline constexpr int kLevels = 4;
inline constexpr int kCondClasses = 8;
inline constexpr std::array<const char*, 4> kModalities{"rgb", "lidar",
                                                        "radar", "event"};

struct ModelConfig {
  int height = 64;
  int width = 64;
  int classes = 8;
  std::array<int, 4> widths{16, 32, 64, 128};
  int adapter_width = 4;  // channels out of each per-modality 1x1 adapter
  int window = 8;         // attention window side, levels are reflect-padded
  int heads = 2;
  int token_width = 64;   // shared width of depth/condition tokens
  int bottleneck = 4;     // depth-fuse MLP reduction factor
  int head_width = 16;    // depth-head channels per level
  int fpn_width = 32;
  int cond_ffn_mult = 2;
  double d_min = 2.0;
  double d_max = 80.0;
  bool use_ct = true;
  bool use_dt = true;
  bool use_aux_depth_head = true;
  bool use_pos_bias = true;

  bool needs_depth_pyramid() const { return use_dt || use_aux_depth_head; }

  // Spatial size per level. The stem quarters the input; each later stage
  // halves until the level saturates at 1x1, where stages become 1x1 convs.
  std::array<std::pair<int, int>, 4> level_sizes() const;

  void validate() const;
  static ModelConfig from_keyval(KeyVal kv);
  // Fixed-order key=value rendering; two configs are interchangeable for
  // checkpoint purposes iff these bytes match.
  std::string canonical_text() const;
  std::uint64_t hash() const;
};

class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t index(const std::string& name) const;
  const std::vector<std::string>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t total_elements() const;

 private:
  std::vector<std::string> order_;
  std::vector<Tensor> values_;
};

// Parameter leaves registered on one tape, aligned with ParamStore order.
struct BoundParams {
  std::vector<Var> leaves;
};

enum class Mode { train, inference };

struct ModelOutput {
  Var seg_logits;   // [C, H, W]
  Var depth_pred;   // [H, W]; only in train mode with the head enabled
  Var cond_logits;  // [kCondClasses]; only with use_ct
  Var ct;           // [token_width]; only with use_ct
  std::array<Var, 4> rgb_pyramid{};
  std::array<Var, 4> depth_pyramid{};  // only when the pyramid is computed
  std::array<Var, 4> fused{};
};

// ---- window ops ----
// Partition reflect-pads spatial dims up to multiples of k and tiles them
// into [N, C, k, k] with N = ceil(H/k)*ceil(W/k); reassemble inverts it and
// crops back to (h, w). Both are pure index permutations.
Var window_partition(Var x, int k);
Var window_reassemble(Var wins, int h, int w);
Var windows_to_tokens(Var wins);                 // [N,C,k,k] -> [N*k*k, C]
Var tokens_to_windows(Var tokens, int n, int k); // inverse of the above

// Rows of q/k/v are tokens; column blocks of width C/heads attend
// independently and concatenate. Softmax rows are appended to attn_rows
// when it is non-null.
Var multihead_attention(Tape& tape, Var q, Var k, Var v, int heads,
                        std::vector<Var>* attn_rows = nullptr);

// One token per window of a depth feature map: 3x3 conv into token width,
// then the spatial mean inside each window. Depends on nothing outside the
// window.
Var depth_window_tokens(Tape& tape, Var d_l, Var conv_w, Var conv_b, int k);

struct FusionWeights {
  Var q_embed_w, q_embed_b;   // level width -> token width, RGB side
  Var kv_embed_w, kv_embed_b; // level width -> token width, secondary side
  Var wq, wk, wv;             // token width -> token width
  Var wo;                     // token width -> level width
  Var pos_q, pos_k;           // [k*k, token width]; invalid disables the bias
};

// Window cross-attention: queries are the RGB tokens of each window plus an
// optional depth token row (dt, [N, token width]) and an optional shared
// condition token row (ct, [token width]); keys/values are the secondary
// modality tokens with the same extra rows appended, so depth and condition
// content can steer what every RGB token absorbs. The extra output rows are
// dropped before the projection, so the result matches rgb_l spatially.
Var depth_guided_fusion(Tape& tape, Var rgb_l, Var sec_l, Var dt, Var ct,
                        const FusionWeights& fw, int k, int heads,
                        std::vector<Var>* attn_rows = nullptr);

struct LayerNormWeights {
  Var gain, bias;
};
struct AttentionWeights {
  Var wq, wk, wv, wo;
};
struct FeedForwardWeights {
  Var w1, b1, w2, b2;
};
struct CondLayerWeights {
  AttentionWeights attn;
  LayerNormWeights ln1;
  FeedForwardWeights ffn;
  LayerNormWeights ln2;
};
struct CondWeights {
  Var embed_w, embed_b;
  std::vector<CondLayerWeights> enc, dec;
  Var query;  // [1, token width]
  Var cls_w, cls_b;
};

// Flattens a feature map into tokens, runs the encoder stack, then decodes a
// single learned query by cross-attention. No positional encodings anywhere,
// so the result is invariant to spatial permutation of the input. Returns
// (condition token [token width], logits [kCondClasses]).
std::pair<Var, Var> condition_branch(Tape& tape, Var feat,
                                     const CondWeights& w, int heads);

class Model {
 public:
  ModelConfig cfg;
  ParamStore params;

  // Validates cfg, registers every parameter tensor, and initializes each
  // one from Rng(seed, name).
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  BoundParams bind(Tape& tape, bool trainable) const;
  Var pvar(const BoundParams& bp, const std::string& name) const;

  // Per-modality adapter then the shared backbone; unknown modality names
  // are rejected.
  std::array<Var, 4> encode(Tape& tape, const BoundParams& bp, Var image,
                            const std::string& modality) const;
  // Depth pyramid: concat all modality features per level, bottleneck MLP,
  // residual onto the RGB features.
  std::array<Var, 4> fuse_depth_pyramid(
      Tape& tape, const BoundParams& bp,
      const std::array<std::array<Var, 4>, 4>& pyramids) const;
  // Train-only depth map in [d_min, d_max] at input resolution.
  Var aux_depth(Tape& tape, const BoundParams& bp,
                const std::array<Var, 4>& depth_pyramid) const;
  std::pair<Var, Var> condition(Tape& tape, const BoundParams& bp,
                                Var rgb_l4) const;

  ModelOutput forward(Tape& tape, const BoundParams& bp,
                      const scenegen::MultimodalSample& sample, Mode mode,
                      std::vector<Var>* attn_rows = nullptr) const;
  ModelOutput forward_inference(Tape& tape, const BoundParams& bp,
                                const scenegen::MultimodalSample& sample) const;
};

// Checkpoint: one f64 array per parameter plus a text metadata block holding
// the config hash and the step count. Loading refuses hash or parameter-set
// mismatches.
void save_checkpoint(const std::string& path, const Model& model,
                     std::int64_t step);
std::int64_t load_checkpoint(const std::string& path, Model& model);

}  // namespace dgf::fusenet
