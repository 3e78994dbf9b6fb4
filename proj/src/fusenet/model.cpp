#include <string>

#include "dgf/errors.hpp"
#include "dgf/fusenet.hpp"

namespace dgf::fusenet {

namespace {

using diffmath::BcastKind;
using diffmath::PadMode;

Var conv_bias(Var x, Var w, Var b) {
  return diffmath::bcast(BcastKind::add, diffmath::conv2d_valid(x, w, 1), b, 0);
}

Var sigmoid(Var x) {
  // clamped so exp stays finite; saturation keeps the output inside (0, 1)
  const Var z = diffmath::clamp(x, -30.0, 30.0);
  return diffmath::rdivs(diffmath::adds(diffmath::vexp(diffmath::neg(z)), 1.0),
                         1.0);
}

int modality_slot(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kModalities[i]) return i;
  throw ContractViolation("unknown modality '" + name + "'");
}

}  // namespace

std::array<Var, 4> Model::encode(Tape& tape, const BoundParams& bp, Var image,
                                 const std::string& modality) const {
  modality_slot(modality);
  if (!image.valid() || image.shape() != Shape{3, cfg.height, cfg.width})
    throw ContractViolation("encode expects a [3," + std::to_string(cfg.height) +
                            "," + std::to_string(cfg.width) + "] image");
  const auto sizes = cfg.level_sizes();

  const Var a = conv_bias(image, pvar(bp, "adapter." + modality + ".w"),
                          pvar(bp, "adapter." + modality + ".b"));
  Var x = diffmath::space_to_depth2(diffmath::space_to_depth2(a));
  x = diffmath::relu(
      diffmath::conv2d(x, pvar(bp, "backbone.stem.w"), 1, PadMode::reflect, 1));

  std::array<Var, 4> pyr;
  pyr[0] = x;
  for (int l = 1; l < kLevels; ++l) {
    const Var w = pvar(bp, "backbone.stage" + std::to_string(l + 1) + ".w");
    if (sizes[l - 1].first == 1 && sizes[l - 1].second == 1)
      x = diffmath::relu(diffmath::conv2d_valid(x, w, 1));
    else
      x = diffmath::relu(diffmath::conv2d(diffmath::space_to_depth2(x), w, 1,
                                          PadMode::reflect, 1));
    pyr[l] = x;
  }
  (void)tape;
  return pyr;
}

std::array<Var, 4> Model::fuse_depth_pyramid(
    Tape& tape, const BoundParams& bp,
    const std::array<std::array<Var, 4>, 4>& pyramids) const {
  std::array<Var, 4> out;
  for (int l = 0; l < kLevels; ++l) {
    const Var rgb = pyramids[0][l];
    const int c = rgb.shape()[0], h = rgb.shape()[1], w = rgb.shape()[2];
    std::vector<Var> chans;
    for (int m = 0; m < 4; ++m) chans.push_back(pyramids[m][l]);
    const Var cat = diffmath::concat(chans, 0);
    Var tok = diffmath::transpose2d(diffmath::reshape(cat, {4 * c, h * w}));

    const std::string p = "dfuse.l" + std::to_string(l + 1);
    tok = diffmath::relu(diffmath::bcast(
        BcastKind::add, diffmath::matmul(tok, pvar(bp, p + ".w1")),
        pvar(bp, p + ".b1"), 1));
    tok = diffmath::bcast(BcastKind::add,
                          diffmath::matmul(tok, pvar(bp, p + ".w2")),
                          pvar(bp, p + ".b2"), 1);
    const Var delta =
        diffmath::reshape(diffmath::transpose2d(tok), {c, h, w});
    out[l] = diffmath::add(rgb, delta);
  }
  (void)tape;
  return out;
}

Var Model::aux_depth(Tape& tape, const BoundParams& bp,
                     const std::array<Var, 4>& depth_pyramid) const {
  const int th = cfg.height / 4, tw = cfg.width / 4;
  Var sum;
  for (int l = 0; l < kLevels; ++l) {
    const std::string p = "head.l" + std::to_string(l + 1);
    Var y = diffmath::conv2d(depth_pyramid[l], pvar(bp, p + ".w"), 1,
                             PadMode::reflect, 1);
    y = diffmath::relu(diffmath::bcast(BcastKind::add, y, pvar(bp, p + ".b"), 0));
    while (y.shape()[1] < th || y.shape()[2] < tw)
      y = diffmath::upsample2x_bilinear(y);
    sum = l == 0 ? y : diffmath::add(sum, y);
  }
  Var d = conv_bias(sum, pvar(bp, "head.proj.w"), pvar(bp, "head.proj.b"));
  d = diffmath::adds(diffmath::muls(sigmoid(d), cfg.d_max - cfg.d_min),
                     cfg.d_min);
  d = diffmath::upsample2x_bilinear(diffmath::upsample2x_bilinear(d));
  (void)tape;
  return diffmath::reshape(d, {cfg.height, cfg.width});
}

std::pair<Var, Var> Model::condition(Tape& tape, const BoundParams& bp,
                                     Var rgb_l4) const {
  CondWeights w;
  w.embed_w = pvar(bp, "cond.embed.w");
  w.embed_b = pvar(bp, "cond.embed.b");
  auto layer = [&](const std::string& prefix) {
    CondLayerWeights lw;
    lw.attn = {pvar(bp, prefix + ".wq"), pvar(bp, prefix + ".wk"),
               pvar(bp, prefix + ".wv"), pvar(bp, prefix + ".wo")};
    lw.ln1 = {pvar(bp, prefix + ".ln1.g"), pvar(bp, prefix + ".ln1.b")};
    lw.ffn = {pvar(bp, prefix + ".ffn.w1"), pvar(bp, prefix + ".ffn.b1"),
              pvar(bp, prefix + ".ffn.w2"), pvar(bp, prefix + ".ffn.b2")};
    lw.ln2 = {pvar(bp, prefix + ".ln2.g"), pvar(bp, prefix + ".ln2.b")};
    return lw;
  };
  w.enc = {layer("cond.enc1"), layer("cond.enc2")};
  w.query = pvar(bp, "cond.query");
  w.dec = {layer("cond.dec1"), layer("cond.dec2")};
  w.cls_w = pvar(bp, "cond.cls.w");
  w.cls_b = pvar(bp, "cond.cls.b");
  return condition_branch(tape, rgb_l4, w, cfg.heads);
}

ModelOutput Model::forward(Tape& tape, const BoundParams& bp,
                           const scenegen::MultimodalSample& sample, Mode mode,
                           std::vector<Var>* attn_rows) const {
  const Shape plane{3, cfg.height, cfg.width};
  if (sample.rgb.shape != plane || sample.lidar_input.shape != plane ||
      sample.radar_input.shape != plane || sample.event_input.shape != plane)
    throw ContractViolation("sample planes do not match the configured size");

  std::array<std::array<Var, 4>, 4> pyramids;
  const std::array<const Tensor*, 4> imgs{&sample.rgb, &sample.lidar_input,
                                          &sample.radar_input,
                                          &sample.event_input};
  for (int m = 0; m < 4; ++m)
    pyramids[m] = encode(tape, bp, tape.leaf(*imgs[m]), kModalities[m]);

  ModelOutput out;
  out.rgb_pyramid = pyramids[0];
  if (cfg.needs_depth_pyramid())
    out.depth_pyramid = fuse_depth_pyramid(tape, bp, pyramids);
  if (cfg.use_ct) {
    const auto ct_logits = condition(tape, bp, pyramids[0][3]);
    out.ct = ct_logits.first;
    out.cond_logits = ct_logits.second;
  }

  for (int l = 0; l < kLevels; ++l) {
    Var dt;
    if (cfg.use_dt) {
      const std::string p = "dt.l" + std::to_string(l + 1);
      dt = depth_window_tokens(tape, out.depth_pyramid[l], pvar(bp, p + ".w"),
                               pvar(bp, p + ".b"), cfg.window);
    }
    Var fused = pyramids[0][l];
    for (int s = 1; s < 4; ++s) {
      const std::string p =
          "fuse.l" + std::to_string(l + 1) + "." + kModalities[s];
      FusionWeights fw;
      fw.q_embed_w = pvar(bp, p + ".q.w");
      fw.q_embed_b = pvar(bp, p + ".q.b");
      fw.kv_embed_w = pvar(bp, p + ".kv.w");
      fw.kv_embed_b = pvar(bp, p + ".kv.b");
      fw.wq = pvar(bp, p + ".wq");
      fw.wk = pvar(bp, p + ".wk");
      fw.wv = pvar(bp, p + ".wv");
      fw.wo = pvar(bp, p + ".wo");
      if (cfg.use_pos_bias) {
        fw.pos_q = pvar(bp, p + ".pos_q");
        fw.pos_k = pvar(bp, p + ".pos_k");
      }
      fused = diffmath::add(
          fused, depth_guided_fusion(tape, pyramids[0][l], pyramids[s][l], dt,
                                     out.ct, fw, cfg.window, cfg.heads,
                                     attn_rows));
    }
    out.fused[l] = fused;
  }

  // FPN merge top-down; saturated neighbors share a size and skip upsampling
  std::array<Var, 4> lat;
  for (int l = 0; l < kLevels; ++l)
    lat[l] = diffmath::conv2d_valid(
        out.fused[l], pvar(bp, "seg.lat" + std::to_string(l + 1) + ".w"), 1);
  Var p = lat[3];
  for (int l = 2; l >= 0; --l) {
    if (p.shape()[1] != lat[l].shape()[1] || p.shape()[2] != lat[l].shape()[2])
      p = diffmath::upsample2x_bilinear(p);
    p = diffmath::add(lat[l], p);
  }
  p = diffmath::relu(
      diffmath::conv2d(p, pvar(bp, "seg.mix.w"), 1, PadMode::reflect, 1));
  p = conv_bias(p, pvar(bp, "seg.cls.w"), pvar(bp, "seg.cls.b"));
  out.seg_logits =
      diffmath::upsample2x_bilinear(diffmath::upsample2x_bilinear(p));

  if (mode == Mode::train && cfg.use_aux_depth_head)
    out.depth_pred = aux_depth(tape, bp, out.depth_pyramid);
  return out;
}

ModelOutput Model::forward_inference(
    Tape& tape, const BoundParams& bp,
    const scenegen::MultimodalSample& sample) const {
  return forward(tape, bp, sample, Mode::inference);
}

}  // namespace dgf::fusenet
