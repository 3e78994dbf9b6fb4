#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "dgf/errors.hpp"
#include "dgf/fusenet.hpp"
#include "dgf/rng.hpp"
#include "fd_check.hpp"

using namespace dgf;
using namespace dgf::fusenet;
using diffmath::Shape;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// inputs only; label fields stay mostly empty since forward ignores them
scenegen::MultimodalSample synth_sample(int h, int w, std::uint64_t seed) {
  Rng rng(seed, "synth-sample");
  scenegen::MultimodalSample s;
  s.rgb = rand_tensor(rng, {3, h, w}, 0.0, 1.0);
  s.lidar_input = rand_tensor(rng, {3, h, w}, 0.0, 1.0);
  s.radar_input = rand_tensor(rng, {3, h, w}, 0.0, 1.0);
  s.event_input = rand_tensor(rng, {3, h, w}, 0.0, 1.0);
  s.depth_true = rand_tensor(rng, {h, w}, 2.0, 80.0);
  s.panoptic.height = h;
  s.panoptic.width = w;
  s.panoptic.class_id.assign(static_cast<std::size_t>(h) * w, 1);
  s.panoptic.instance_id.assign(static_cast<std::size_t>(h) * w, 1);
  s.lidar_raw.height = h;
  s.lidar_raw.width = w;
  s.lidar_raw.depth.assign(static_cast<std::size_t>(h) * w, 0.0);
  s.lidar_raw.valid.assign(static_cast<std::size_t>(h) * w, 0);
  for (std::size_t i = 0; i < s.lidar_raw.depth.size(); i += 3) {
    s.lidar_raw.depth[i] = rng.uniform(2.0, 80.0);
    s.lidar_raw.valid[i] = 1;
  }
  s.condition = scenegen::ConditionLabel::from_index(static_cast<int>(seed % 8));
  s.seed = seed;
  return s;
}

ModelConfig tiny_cfg(int hw = 16) {
  ModelConfig c;
  c.height = hw;
  c.width = hw;
  c.classes = 4;
  c.widths = {4, 8, 16, 32};
  c.adapter_width = 2;
  c.window = 8;
  c.heads = 2;
  c.token_width = 16;
  c.bottleneck = 4;
  c.head_width = 4;
  c.fpn_width = 8;
  return c;
}

bool same_data(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

std::set<std::string> name_set(const Model& m) {
  return {m.params.order().begin(), m.params.order().end()};
}

}  // namespace

TEST_SUITE("fusenet") {

TEST_CASE("window partition and reassembly round trip exactly") {
  Rng rng(11, "window-roundtrip");
  Tape tape;
  const int h = 16, w = 24;
  const Var x = tape.leaf(rand_tensor(rng, {3, h, w}));
  for (int k : {4, 8, 16}) {
    const Var wins = window_partition(x, k);
    const int nh = (h + k - 1) / k, nw = (w + k - 1) / k;
    CHECK(wins.shape() == Shape{nh * nw, 3, k, k});
    const Var back = window_reassemble(wins, h, w);
    CHECK(same_data(back.data(), x.data()));
  }

  // constant input stays constant through padding and tiling
  const Var c = tape.leaf(Tensor::full({2, 5, 7}, 3.25));
  const Var cw = window_partition(c, 4);
  for (double v : cw.data()) CHECK(v == 3.25);

  CHECK_THROWS_AS(window_reassemble(window_partition(x, 4), 9, 9),
                  ContractViolation);
}

TEST_CASE("token layout maps windows to rows and back") {
  Rng rng(12, "token-layout");
  Tape tape;
  const Var x = tape.leaf(rand_tensor(rng, {5, 6, 6}));
  const Var wins = window_partition(x, 3);
  const int n = wins.shape()[0];
  const Var toks = windows_to_tokens(wins);
  CHECK(toks.shape() == Shape{n * 9, 5});
  // row (win, p) holds channel ch at flat position p of that window
  const auto& wd = wins.data();
  const auto& td = toks.data();
  for (int win = 0; win < n; ++win)
    for (int p = 0; p < 9; ++p)
      for (int ch = 0; ch < 5; ++ch)
        CHECK(td[static_cast<std::size_t>(win * 9 + p) * 5 + ch] ==
              wd[(static_cast<std::size_t>(win) * 5 + ch) * 9 + p]);
  const Var back = tokens_to_windows(toks, n, 3);
  CHECK(same_data(back.data(), wins.data()));
}

TEST_CASE("config validation, parsing, and canonical hashing") {
  ModelConfig c = tiny_cfg();
  c.validate();
  CHECK(c.level_sizes()[0] == std::pair<int, int>{4, 4});
  CHECK(c.level_sizes()[2] == std::pair<int, int>{1, 1});
  CHECK(c.level_sizes()[3] == std::pair<int, int>{1, 1});

  ModelConfig big;
  CHECK(big.level_sizes()[3] == std::pair<int, int>{2, 2});

  ModelConfig bad = tiny_cfg();
  bad.height = 96;  // 24 -> 12 -> 6 -> 3 cannot halve or saturate
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = tiny_cfg();
  bad.token_width = 15;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = tiny_cfg();
  bad.widths[1] = 9;  // not divisible by the bottleneck
  CHECK_THROWS_AS(bad.validate(), ContractViolation);

  const ModelConfig parsed = ModelConfig::from_keyval(
      KeyVal::parse("height = 16\nwidth = 16\nclasses = 4\nwidth_l1 = 4\n"
                    "width_l2 = 8\nwidth_l3 = 16\nwidth_l4 = 32\n"
                    "adapter_width = 2\ntoken_width = 16\nhead_width = 4\n"
                    "fpn_width = 8\nuse_dt = false\n",
                    "inline"));
  CHECK(parsed.widths[3] == 32);
  CHECK_FALSE(parsed.use_dt);
  CHECK(parsed.hash() != tiny_cfg().hash());

  ModelConfig d1 = tiny_cfg(), d2 = tiny_cfg();
  CHECK(d1.hash() == d2.hash());
  d2.use_pos_bias = false;
  CHECK(d1.hash() != d2.hash());
  CHECK(d1.canonical_text() == tiny_cfg().canonical_text());
}

TEST_CASE("seeded init is name-keyed: toggles never shift shared tensors") {
  ModelConfig full = tiny_cfg();
  ModelConfig bare = tiny_cfg();
  bare.use_ct = false;
  bare.use_dt = false;
  bare.use_aux_depth_head = false;
  bare.use_pos_bias = false;
  const Model a = Model::build(full, 99);
  const Model b = Model::build(bare, 99);
  for (const std::string& name : b.params.order()) {
    REQUIRE(a.params.has(name));
    CHECK(same_data(a.params.at(name).data, b.params.at(name).data));
  }
  CHECK(a.params.size() > b.params.size());

  // backbone weight count does not depend on how many adapters feed it
  std::size_t backbone_a = 0, backbone_b = 0;
  for (const std::string& n : a.params.order())
    if (n.rfind("backbone.", 0) == 0) backbone_a += a.params.at(n).numel();
  for (const std::string& n : b.params.order())
    if (n.rfind("backbone.", 0) == 0) backbone_b += b.params.at(n).numel();
  CHECK(backbone_a == backbone_b);
  CHECK(backbone_a > 0);
}

TEST_CASE("each toggle owns a documented parameter prefix") {
  auto with = [&](bool ct, bool aux, bool dt, bool pos) {
    ModelConfig c = tiny_cfg();
    c.use_ct = ct;
    c.use_aux_depth_head = aux;
    c.use_dt = dt;
    c.use_pos_bias = pos;
    return name_set(Model::build(c, 5));
  };
  const auto full = with(true, true, true, true);

  auto removed = [&](const std::set<std::string>& variant) {
    std::vector<std::string> gone;
    std::set_difference(full.begin(), full.end(), variant.begin(),
                        variant.end(), std::back_inserter(gone));
    // nothing may appear that the full model lacks
    std::vector<std::string> extra;
    std::set_difference(variant.begin(), variant.end(), full.begin(),
                        full.end(), std::back_inserter(extra));
    CHECK(extra.empty());
    return gone;
  };

  for (const std::string& n : removed(with(false, true, true, true))) {
    CHECK(n.rfind("cond.", 0) == 0);
  }
  for (const std::string& n : removed(with(true, false, true, true))) {
    CHECK(n.rfind("head.", 0) == 0);
  }
  for (const std::string& n : removed(with(true, true, false, true))) {
    CHECK(n.rfind("dt.", 0) == 0);
  }
  for (const std::string& n : removed(with(true, true, true, false))) {
    const bool is_pos = n.find(".pos_q") != std::string::npos ||
                        n.find(".pos_k") != std::string::npos;
    CHECK(is_pos);
  }
  // the depth pyramid exists for either consumer and only for them
  for (const std::string& n : removed(with(true, false, false, true))) {
    const bool expected = n.rfind("head.", 0) == 0 || n.rfind("dt.", 0) == 0 ||
                          n.rfind("dfuse.", 0) == 0;
    CHECK(expected);
  }
  CHECK(with(true, false, true, true).count("dfuse.l1.w1") == 1);
  CHECK(with(true, true, false, true).count("dfuse.l1.w1") == 1);
  CHECK(with(true, false, false, true).count("dfuse.l1.w1") == 0);
}

TEST_CASE("encode: level shapes, zero propagation, and shared weights") {
  const Model m = Model::build(tiny_cfg(), 3);
  Tape tape;
  const BoundParams bp = m.bind(tape, false);

  Rng rng(21, "encode");
  const Var img = tape.leaf(rand_tensor(rng, {3, 16, 16}, 0.0, 1.0));
  const auto pyr = m.encode(tape, bp, img, "rgb");
  CHECK(pyr[0].shape() == Shape{4, 4, 4});
  CHECK(pyr[1].shape() == Shape{8, 2, 2});
  CHECK(pyr[2].shape() == Shape{16, 1, 1});
  CHECK(pyr[3].shape() == Shape{32, 1, 1});

  CHECK_THROWS_AS(m.encode(tape, bp, img, "thermal"), ContractViolation);

  // adapter biases init to zero and the backbone is bias-free, so a zero
  // image produces an exactly zero pyramid
  const Var zero = tape.leaf(Tensor::zeros({3, 16, 16}));
  for (const Var& level : m.encode(tape, bp, zero, "rgb"))
    for (double v : level.data()) CHECK(v == 0.0);

  // same adapter weights + same input = same features, any modality name
  Model twin = Model::build(tiny_cfg(), 3);
  twin.params.at("adapter.lidar.w").data = twin.params.at("adapter.rgb.w").data;
  Tape t2;
  const BoundParams bp2 = twin.bind(t2, false);
  const Var img2 = t2.leaf(rand_tensor(rng, {3, 16, 16}, 0.0, 1.0));
  const auto pr = twin.encode(t2, bp2, img2, "rgb");
  const auto pl = twin.encode(t2, bp2, img2, "lidar");
  for (int l = 0; l < 4; ++l) CHECK(same_data(pr[l].data(), pl[l].data()));
}

TEST_CASE("depth fuse with a zeroed MLP returns the rgb features exactly") {
  Model m = Model::build(tiny_cfg(), 7);
  for (int l = 1; l <= 4; ++l) {
    auto& w2 = m.params.at("dfuse.l" + std::to_string(l) + ".w2").data;
    std::fill(w2.begin(), w2.end(), 0.0);
  }
  Tape tape;
  const BoundParams bp = m.bind(tape, false);
  const auto s = synth_sample(16, 16, 40);
  std::array<std::array<Var, 4>, 4> pyramids;
  const std::array<const Tensor*, 4> imgs{&s.rgb, &s.lidar_input,
                                          &s.radar_input, &s.event_input};
  for (int i = 0; i < 4; ++i)
    pyramids[i] = m.encode(tape, bp, tape.leaf(*imgs[i]), kModalities[i]);
  const auto d = m.fuse_depth_pyramid(tape, bp, pyramids);
  for (int l = 0; l < 4; ++l)
    CHECK(same_data(d[l].data(), pyramids[0][l].data()));
}

TEST_CASE("depth head stays inside [d_min, d_max] and reaches every level") {
  const Model m = Model::build(tiny_cfg(), 13);
  Tape tape;
  const BoundParams bp = m.bind(tape, true);
  const auto out =
      m.forward(tape, bp, synth_sample(16, 16, 41), Mode::train);
  REQUIRE(out.depth_pred.valid());
  CHECK(out.depth_pred.shape() == Shape{16, 16});
  for (double v : out.depth_pred.data()) {
    CHECK(v >= m.cfg.d_min);
    CHECK(v <= m.cfg.d_max);
  }

  tape.backward(diffmath::reduce_sum(out.depth_pred));
  for (int l = 1; l <= 4; ++l) {
    const Var w = m.pvar(bp, "head.l" + std::to_string(l) + ".w");
    REQUIRE(tape.has_grad(w.id));
    double mag = 0.0;
    for (double g : tape.grad(w.id)) mag += std::fabs(g);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("condition branch ignores spatial permutation of its input") {
  Rng rng(31, "cond-perm");
  Tape tape;
  const int c = 6, tw = 8, heads = 2, t = 12;

  auto leaf = [&](Shape s) { return tape.leaf(rand_tensor(rng, std::move(s), -0.5, 0.5)); };
  CondWeights w;
  w.embed_w = leaf({c, tw});
  w.embed_b = leaf({tw});
  auto mk_layer = [&]() {
    CondLayerWeights lw;
    lw.attn = {leaf({tw, tw}), leaf({tw, tw}), leaf({tw, tw}), leaf({tw, tw})};
    lw.ln1 = {leaf({tw}), leaf({tw})};
    lw.ffn = {leaf({tw, 2 * tw}), leaf({2 * tw}), leaf({2 * tw, tw}), leaf({tw})};
    lw.ln2 = {leaf({tw}), leaf({tw})};
    return lw;
  };
  w.enc = {mk_layer(), mk_layer()};
  w.query = leaf({1, tw});
  w.dec = {mk_layer(), mk_layer()};
  w.cls_w = leaf({tw, kCondClasses});
  w.cls_b = leaf({kCondClasses});

  const Tensor feat = rand_tensor(rng, {c, 3, 4});
  std::vector<int> perm(t);
  for (int i = 0; i < t; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (int i = t - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
  Tensor shuffled = Tensor::zeros({c, 3, 4});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < t; ++p)
      shuffled.data[static_cast<std::size_t>(ch) * t +
                    static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])] =
          feat.data[static_cast<std::size_t>(ch) * t + static_cast<std::size_t>(p)];

  const auto a = condition_branch(tape, tape.leaf(feat), w, heads);
  const auto b = condition_branch(tape, tape.leaf(shuffled), w, heads);
  CHECK(a.first.shape() == Shape{tw});
  CHECK(a.second.shape() == Shape{kCondClasses});
  CHECK(max_abs_diff(a.first.data(), b.first.data()) < 1e-10);
  CHECK(max_abs_diff(a.second.data(), b.second.data()) < 1e-10);
}

TEST_CASE("attention: probability rows sum to one at 1e-12") {
  Rng rng(32, "attn-rows");
  Tape tape;
  const Var q = tape.leaf(rand_tensor(rng, {5, 8}));
  const Var k = tape.leaf(rand_tensor(rng, {7, 8}));
  const Var v = tape.leaf(rand_tensor(rng, {7, 8}));
  std::vector<Var> rows;
  const Var out = multihead_attention(tape, q, k, v, 2, &rows);
  CHECK(out.shape() == Shape{5, 8});
  REQUIRE(rows.size() == 2);
  for (const Var& p : rows) {
    REQUIRE(p.shape() == Shape{5, 7});
    for (int r = 0; r < 5; ++r) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j)
        s += p.data()[static_cast<std::size_t>(r) * 7 + j];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(multihead_attention(tape, q, k, v, 3, nullptr),
                  ContractViolation);

  // fusion attention rows, through the whole model
  const Model m = Model::build(tiny_cfg(), 17);
  Tape t2;
  const BoundParams bp = m.bind(t2, false);
  std::vector<Var> fr;
  m.forward(t2, bp, synth_sample(16, 16, 42), Mode::inference, &fr);
  REQUIRE(!fr.empty());
  for (const Var& p : fr) {
    const int nq = p.shape()[0], nk = p.shape()[1];
    for (int r = 0; r < nq; ++r) {
      double s = 0.0;
      for (int j = 0; j < nk; ++j)
        s += p.data()[static_cast<std::size_t>(r) * nk + j];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("fusion: output shape, token drop, and depth sensitivity") {
  Rng rng(33, "dgf");
  Tape tape;
  const int c = 3, tw = 8, k = 4, heads = 2;
  auto leaf = [&](Shape s) { return tape.leaf(rand_tensor(rng, std::move(s), -0.5, 0.5)); };

  FusionWeights fw;
  fw.q_embed_w = leaf({c, tw});
  fw.q_embed_b = leaf({tw});
  fw.kv_embed_w = leaf({c, tw});
  fw.kv_embed_b = leaf({tw});
  fw.wq = leaf({tw, tw});
  fw.wk = leaf({tw, tw});
  fw.wv = leaf({tw, tw});
  fw.wo = leaf({tw, c});
  fw.pos_q = leaf({k * k, tw});
  fw.pos_k = leaf({k * k, tw});

  const Var rgb = leaf({c, 5, 6});
  const Var sec = leaf({c, 5, 6});
  const Var ct = leaf({tw});
  const Var dconv_w = leaf({tw, c, 3, 3});
  const Var dconv_b = leaf({tw});

  const Tensor d0 = rand_tensor(rng, {c, 5, 6});
  Tensor d1 = d0;
  d1.data[7] += 0.25;

  const Var dt0 = depth_window_tokens(tape, tape.leaf(d0), dconv_w, dconv_b, k);
  const Var dt1 = depth_window_tokens(tape, tape.leaf(d1), dconv_w, dconv_b, k);
  CHECK(dt0.shape() == Shape{4, tw});

  const Var f0 = depth_guided_fusion(tape, rgb, sec, dt0, ct, fw, k, heads);
  const Var f1 = depth_guided_fusion(tape, rgb, sec, dt1, ct, fw, k, heads);
  CHECK(f0.shape() == Shape{c, 5, 6});
  CHECK(max_abs_diff(f0.data(), f1.data()) > 0.0);

  // without the depth token row the same perturbation is invisible
  const Var g0 = depth_guided_fusion(tape, rgb, sec, Var{}, ct, fw, k, heads);
  const Var g1 = depth_guided_fusion(tape, rgb, sec, Var{}, ct, fw, k, heads);
  CHECK(g0.shape() == Shape{c, 5, 6});
  CHECK(same_data(g0.data(), g1.data()));

  // and with neither extra row the query set is purely rgb tokens
  const Var h0 = depth_guided_fusion(tape, rgb, sec, Var{}, Var{}, fw, k, heads);
  CHECK(h0.shape() == Shape{c, 5, 6});

  const Var bad_dt = leaf({7, tw});
  CHECK_THROWS_AS(
      depth_guided_fusion(tape, rgb, sec, bad_dt, ct, fw, k, heads),
      ContractViolation);
  const Var mis = leaf({c, 6, 5});
  CHECK_THROWS_AS(depth_guided_fusion(tape, rgb, mis, dt0, ct, fw, k, heads),
                  ContractViolation);
}

TEST_CASE("constant depth window: token equals the conv response mean") {
  Tape tape;
  // averaging conv: every kernel tap 1/9 so a constant window maps to the
  // channel-sum of the constant, bias shifted
  const int c = 2, tw = 3, k = 4;
  Tensor wconv = Tensor::full({tw, c, 3, 3}, 1.0 / 9.0);
  Tensor bconv = Tensor::from({tw}, {0.5, -0.25, 0.0});
  Tensor d = Tensor::zeros({c, k, k});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < k * k; ++i)
      d.data[static_cast<std::size_t>(ch) * k * k + i] = ch == 0 ? 2.0 : -1.0;
  const Var dt = depth_window_tokens(tape, tape.leaf(d), tape.leaf(wconv),
                                     tape.leaf(bconv), k);
  REQUIRE(dt.shape() == Shape{1, tw});
  // reflect padding of a constant map is constant, so conv output is
  // (2.0 + -1.0) * 9 taps / 9 = 1.0 per output channel, plus bias
  CHECK(dt.data()[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(dt.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(dt.data()[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("depth head params never touch the segmentation path") {
  const ModelConfig cfg = tiny_cfg();
  const auto s = synth_sample(16, 16, 43);

  Model a = Model::build(cfg, 23);
  Tape t1;
  const auto out1 = a.forward(t1, a.bind(t1, false), s, Mode::train);

  // rewriting every head parameter changes depth but not segmentation
  for (const std::string& n : a.params.order())
    if (n.rfind("head.", 0) == 0)
      for (double& v : a.params.at(n).data) v = 0.33 * v + 0.11;
  Tape t2;
  const auto out2 = a.forward(t2, a.bind(t2, false), s, Mode::train);
  CHECK(same_data(out1.seg_logits.data(), out2.seg_logits.data()));
  CHECK(max_abs_diff(out1.depth_pred.data(), out2.depth_pred.data()) > 0.0);

  // a model built without the head at the same seed predicts the same seg
  ModelConfig no_head = cfg;
  no_head.use_aux_depth_head = false;
  const Model b = Model::build(no_head, 23);
  Tape t3;
  const auto out3 = b.forward_inference(t3, b.bind(t3, false), s);
  CHECK(same_data(out1.seg_logits.data(), out3.seg_logits.data()));
  CHECK_FALSE(out3.depth_pred.valid());
}

TEST_CASE("inference mode: identical seg logits, strictly fewer tape ops") {
  const Model m = Model::build(tiny_cfg(), 29);
  const auto s = synth_sample(16, 16, 44);

  Tape train_tape;
  const auto train_out =
      m.forward(train_tape, m.bind(train_tape, true), s, Mode::train);
  Tape inf_tape;
  const auto inf_out =
      m.forward_inference(inf_tape, m.bind(inf_tape, true), s);

  CHECK(same_data(train_out.seg_logits.data(), inf_out.seg_logits.data()));
  CHECK(inf_tape.ops() < train_tape.ops());
  CHECK(inf_tape.nodes() < train_tape.nodes());
  CHECK(train_out.depth_pred.valid());
  CHECK_FALSE(inf_out.depth_pred.valid());
  // the depth pyramid is still built for fusion in both modes
  for (int l = 0; l < 4; ++l) CHECK(inf_out.depth_pyramid[l].valid());
}

TEST_CASE("forward output shapes and toggle-dependent presence") {
  const Model m = Model::build(tiny_cfg(), 37);
  Tape tape;
  const auto out =
      m.forward(tape, m.bind(tape, false), synth_sample(16, 16, 45), Mode::train);
  CHECK(out.seg_logits.shape() == Shape{4, 16, 16});
  CHECK(out.cond_logits.shape() == Shape{kCondClasses});
  CHECK(out.ct.shape() == Shape{16});
  for (int l = 0; l < 4; ++l) {
    CHECK(out.fused[l].shape() == out.rgb_pyramid[l].shape());
    CHECK(out.depth_pyramid[l].valid());
  }

  ModelConfig plain = tiny_cfg();
  plain.use_ct = false;
  plain.use_dt = false;
  plain.use_aux_depth_head = false;
  const Model p = Model::build(plain, 37);
  Tape t2;
  const auto out2 =
      p.forward(t2, p.bind(t2, false), synth_sample(16, 16, 45), Mode::train);
  CHECK(out2.seg_logits.shape() == Shape{4, 16, 16});
  CHECK_FALSE(out2.cond_logits.valid());
  CHECK_FALSE(out2.ct.valid());
  CHECK_FALSE(out2.depth_pred.valid());
  CHECK_FALSE(out2.depth_pyramid[0].valid());

  const auto bad = synth_sample(32, 32, 46);
  CHECK_THROWS_AS(p.forward(t2, p.bind(t2, false), bad, Mode::train),
                  ContractViolation);
}

TEST_CASE("with zeroed output projections the fused pyramid is pure rgb") {
  Model m = Model::build(tiny_cfg(), 41);
  for (const std::string& n : m.params.order())
    if (n.size() > 3 && n.compare(n.size() - 3, 3, ".wo") == 0 &&
        n.rfind("fuse.", 0) == 0)
      std::fill(m.params.at(n).data.begin(), m.params.at(n).data.end(), 0.0);
  Tape tape;
  const auto out =
      m.forward(tape, m.bind(tape, false), synth_sample(16, 16, 47), Mode::train);
  for (int l = 0; l < 4; ++l)
    CHECK(same_data(out.fused[l].data(), out.rgb_pyramid[l].data()));
}

TEST_CASE("checkpoint round trip preserves every parameter and the step") {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / "dgf_fusenet_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.dgfs").string();

  const Model src = Model::build(tiny_cfg(), 51);
  save_checkpoint(path, src, 17);

  Model dst = Model::build(tiny_cfg(), 777);  // different init, same shape
  CHECK(load_checkpoint(path, dst) == 17);
  for (const std::string& n : src.params.order())
    CHECK(same_data(src.params.at(n).data, dst.params.at(n).data));

  ModelConfig other = tiny_cfg();
  other.use_dt = false;
  Model mismatch = Model::build(other, 51);
  CHECK_THROWS_AS(load_checkpoint(path, mismatch), ContractViolation);

  fs::remove_all(dir);
}

TEST_CASE("analytic gradients match finite differences across param groups") {
  const Model m = Model::build(tiny_cfg(), 61);
  const auto s = synth_sample(16, 16, 48);

  auto scalar_loss = [&](Tape& tape, const BoundParams& bp) {
    const auto out = m.forward(tape, bp, s, Mode::train);
    Var l = diffmath::reduce_mean(diffmath::mul(out.seg_logits, out.seg_logits));
    l = diffmath::add(l, diffmath::muls(diffmath::reduce_mean(out.depth_pred), 0.1));
    l = diffmath::add(
        l, diffmath::reduce_mean(diffmath::mul(out.cond_logits, out.cond_logits)));
    return l;
  };

  Tape tape;
  const BoundParams bp = m.bind(tape, true);
  tape.backward(scalar_loss(tape, bp));

  Model probe = m;
  auto eval = [&]() {
    Tape t;
    const BoundParams b = probe.bind(t, false);
    return scalar_loss(t, b).item();
  };

  double worst = 0.0;
  std::string worst_name = "";
  for (const std::string& name : m.params.order()) {
    const std::size_t count = m.params.at(name).numel();
    Rng pick(7, name);
    const std::size_t i = pick.uniform_int(static_cast<std::uint64_t>(count));
    const double v0 = probe.params.at(name).data[i];
    const double h = 1e-5 * std::max(1.0, std::fabs(v0));

    probe.params.at(name).data[i] = v0 + h;
    const double fp = eval();
    probe.params.at(name).data[i] = v0 - h;
    const double fm = eval();
    probe.params.at(name).data[i] = v0;

    const double fd = (fp - fm) / (2.0 * h);
    const Var leaf = m.pvar(bp, name);
    const double an = tape.has_grad(leaf.id) ? tape.grad(leaf.id)[i] : 0.0;
    const double err = testutil::rel_err(fd, an);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  INFO("worst group: ", worst_name, " rel err ", worst);
  CHECK(worst < 1e-4);
}

}  // TEST_SUITE
