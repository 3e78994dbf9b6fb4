#include <cmath>
#include <memory>
#include <string>

#include "dgf/errors.hpp"
#include "dgf/fusenet.hpp"

namespace dgf::fusenet {

namespace {

using diffmath::BcastKind;
using diffmath::PadMode;
using IdxVec = std::vector<std::int64_t>;

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Var gather_idx(Var x, IdxVec idx, Shape out) {
  return diffmath::gather(
      x, std::make_shared<const IdxVec>(std::move(idx)), std::move(out));
}

// contiguous row block [r0, r0+rows) of a [R, C] matrix
Var row_block(Var x, int r0, int rows) {
  const int c = x.shape()[1];
  IdxVec idx(static_cast<std::size_t>(rows) * c);
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = static_cast<std::int64_t>(r0) * c + static_cast<std::int64_t>(i);
  return gather_idx(x, std::move(idx), {rows, c});
}

Var linear_bias(Tape& tape, Var x, Var w, Var b) {
  (void)tape;
  return diffmath::bcast(BcastKind::add, diffmath::matmul(x, w), b, 1);
}

Var layer_norm(Tape& tape, Var x, const LayerNormWeights& w) {
  const Var mu = diffmath::reduce_mean(x, 1);
  const Var xc = diffmath::bcast(BcastKind::sub, x, mu, 0);
  const Var var = diffmath::reduce_mean(diffmath::mul(xc, xc), 1);
  const Var sd = diffmath::vsqrt(diffmath::adds(var, 1e-5));
  Var y = diffmath::bcast(BcastKind::div, xc, sd, 0);
  y = diffmath::bcast(BcastKind::mul, y, w.gain, 1);
  (void)tape;
  return diffmath::bcast(BcastKind::add, y, w.bias, 1);
}

}  // namespace

Var window_partition(Var x, int k) {
  if (!x.valid() || x.shape().size() != 3)
    throw ContractViolation("window_partition expects a [C,H,W] map");
  if (k < 1) throw ContractViolation("window side must be positive");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int nh = (h + k - 1) / k, nw = (w + k - 1) / k;
  const int n = nh * nw;
  IdxVec idx(static_cast<std::size_t>(n) * c * k * k);
  std::size_t o = 0;
  for (int wy = 0; wy < nh; ++wy)
    for (int wx = 0; wx < nw; ++wx)
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < k; ++py) {
          const int gy = reflect_index(wy * k + py, h);
          for (int px = 0; px < k; ++px) {
            const int gx = reflect_index(wx * k + px, w);
            idx[o++] = (static_cast<std::int64_t>(ch) * h + gy) * w + gx;
          }
        }
  return gather_idx(x, std::move(idx), {n, c, k, k});
}

Var window_reassemble(Var wins, int h, int w) {
  if (!wins.valid() || wins.shape().size() != 4 ||
      wins.shape()[2] != wins.shape()[3])
    throw ContractViolation("window_reassemble expects [N,C,k,k] windows");
  const int n = wins.shape()[0], c = wins.shape()[1], k = wins.shape()[2];
  const int nh = (h + k - 1) / k, nw = (w + k - 1) / k;
  if (n != nh * nw)
    throw ContractViolation("window count " + std::to_string(n) +
                            " does not tile a " + std::to_string(h) + "x" +
                            std::to_string(w) + " map with side " +
                            std::to_string(k));
  IdxVec idx(static_cast<std::size_t>(c) * h * w);
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int win = (y / k) * nw + (x / k);
        idx[o++] = ((static_cast<std::int64_t>(win) * c + ch) * k + y % k) * k +
                   x % k;
      }
  return gather_idx(wins, std::move(idx), {c, h, w});
}

Var windows_to_tokens(Var wins) {
  if (!wins.valid() || wins.shape().size() != 4 ||
      wins.shape()[2] != wins.shape()[3])
    throw ContractViolation("windows_to_tokens expects [N,C,k,k] windows");
  const int n = wins.shape()[0], c = wins.shape()[1], k = wins.shape()[2];
  IdxVec idx(static_cast<std::size_t>(n) * k * k * c);
  std::size_t o = 0;
  for (int win = 0; win < n; ++win)
    for (int p = 0; p < k * k; ++p)
      for (int ch = 0; ch < c; ++ch)
        idx[o++] = (static_cast<std::int64_t>(win) * c + ch) * k * k + p;
  return gather_idx(wins, std::move(idx), {n * k * k, c});
}

Var tokens_to_windows(Var tokens, int n, int k) {
  if (!tokens.valid() || tokens.shape().size() != 2)
    throw ContractViolation("tokens_to_windows expects a [N*k*k, C] matrix");
  const int c = tokens.shape()[1];
  if (tokens.shape()[0] != n * k * k)
    throw ContractViolation("token count does not match n*k*k");
  IdxVec idx(static_cast<std::size_t>(n) * c * k * k);
  std::size_t o = 0;
  for (int win = 0; win < n; ++win)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < k * k; ++p)
        idx[o++] = (static_cast<std::int64_t>(win) * k * k + p) * c + ch;
  return gather_idx(tokens, std::move(idx), {n, c, k, k});
}

Var multihead_attention(Tape& tape, Var q, Var k, Var v, int heads,
                        std::vector<Var>* attn_rows) {
  if (!q.valid() || !k.valid() || !v.valid() || q.shape().size() != 2 ||
      k.shape().size() != 2 || v.shape().size() != 2)
    throw ContractViolation("attention expects rank-2 token matrices");
  const int c = q.shape()[1];
  if (k.shape()[1] != c || v.shape()[1] != c || k.shape()[0] != v.shape()[0])
    throw ContractViolation("attention q/k/v widths disagree");
  if (heads < 1 || c % heads != 0)
    throw ContractViolation("token width must be a multiple of heads");
  const int nq = q.shape()[0], nk = k.shape()[0], dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto head_cols = [&](Var x, int rows, int h) {
    IdxVec idx(static_cast<std::size_t>(rows) * dh);
    std::size_t o = 0;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < dh; ++j)
        idx[o++] = static_cast<std::int64_t>(r) * c + h * dh + j;
    return gather_idx(x, std::move(idx), {rows, dh});
  };

  std::vector<Var> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var qh = head_cols(q, nq, h);
    const Var kh = head_cols(k, nk, h);
    const Var vh = head_cols(v, nk, h);
    const Var scores =
        diffmath::muls(diffmath::matmul(qh, diffmath::transpose2d(kh)), scale);
    const Var probs = diffmath::softmax(scores, 1);
    if (attn_rows != nullptr) attn_rows->push_back(probs);
    ctx.push_back(diffmath::matmul(probs, vh));
  }
  (void)tape;
  return diffmath::concat(ctx, 1);
}

Var depth_window_tokens(Tape& tape, Var d_l, Var conv_w, Var conv_b, int k) {
  if (!d_l.valid() || d_l.shape().size() != 3)
    throw ContractViolation("depth_window_tokens expects a [C,H,W] map");
  const Var wins = window_partition(d_l, k);
  const int n = wins.shape()[0], c = wins.shape()[1];
  const int ct = conv_w.shape()[0];
  std::vector<Var> rows;
  rows.reserve(n);
  for (int win = 0; win < n; ++win) {
    IdxVec idx(static_cast<std::size_t>(c) * k * k);
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = static_cast<std::int64_t>(win) * c * k * k +
               static_cast<std::int64_t>(i);
    const Var one = gather_idx(wins, std::move(idx), {c, k, k});
    Var y = diffmath::conv2d(one, conv_w, 1, PadMode::reflect, 1);
    y = diffmath::bcast(BcastKind::add, y, conv_b, 0);
    y = diffmath::reduce_mean(diffmath::reshape(y, {ct, k * k}), 1);
    rows.push_back(diffmath::reshape(y, {1, ct}));
  }
  (void)tape;
  return diffmath::concat(rows, 0);
}

Var depth_guided_fusion(Tape& tape, Var rgb_l, Var sec_l, Var dt, Var ct,
                        const FusionWeights& fw, int k, int heads,
                        std::vector<Var>* attn_rows) {
  if (!rgb_l.valid() || !sec_l.valid() || rgb_l.shape() != sec_l.shape() ||
      rgb_l.shape().size() != 3)
    throw ContractViolation("fusion inputs must be [C,H,W] maps of one shape");
  const int h = rgb_l.shape()[1], w = rgb_l.shape()[2];
  const int tw = fw.q_embed_w.shape()[1];
  const int k2 = k * k;

  const Var rwin = window_partition(rgb_l, k);
  const int n = rwin.shape()[0];
  if (dt.valid() && (dt.shape().size() != 2 || dt.shape()[0] != n ||
                     dt.shape()[1] != tw))
    throw ContractViolation("depth tokens disagree with the window count");

  Var rq = linear_bias(tape, windows_to_tokens(rwin), fw.q_embed_w,
                       fw.q_embed_b);
  const Var kv = linear_bias(tape, windows_to_tokens(window_partition(sec_l, k)),
                             fw.kv_embed_w, fw.kv_embed_b);
  Var kin = kv;
  if (fw.pos_q.valid()) {
    // tile the per-window bias across all windows
    IdxVec tile(static_cast<std::size_t>(n) * k2 * tw);
    for (std::size_t i = 0; i < tile.size(); ++i)
      tile[i] = static_cast<std::int64_t>(i % (static_cast<std::size_t>(k2) * tw));
    auto shared = std::make_shared<const IdxVec>(std::move(tile));
    rq = diffmath::add(rq, diffmath::gather(fw.pos_q, shared, {n * k2, tw}));
    kin = diffmath::add(kv, diffmath::gather(fw.pos_k, shared, {n * k2, tw}));
  }

  const Var ct_row = ct.valid() ? diffmath::reshape(ct, {1, tw}) : ct;
  std::vector<Var> outs;
  outs.reserve(n);
  for (int win = 0; win < n; ++win) {
    // the extra tokens join both sides: as queries their outputs are
    // dropped below, as keys/values they steer every rgb row's attention,
    // which is what makes fused features depend on depth and condition
    std::vector<Var> qparts{row_block(rq, win * k2, k2)};
    std::vector<Var> kparts{row_block(kin, win * k2, k2)};
    std::vector<Var> vparts{row_block(kv, win * k2, k2)};
    if (dt.valid()) {
      const Var dtr = row_block(dt, win, 1);
      qparts.push_back(dtr);
      kparts.push_back(dtr);
      vparts.push_back(dtr);
    }
    if (ct_row.valid()) {
      qparts.push_back(ct_row);
      kparts.push_back(ct_row);
      vparts.push_back(ct_row);
    }
    auto join = [](std::vector<Var>& parts) {
      return parts.size() == 1 ? parts[0] : diffmath::concat(parts, 0);
    };
    const Var qp = diffmath::matmul(join(qparts), fw.wq);
    const Var kp = diffmath::matmul(join(kparts), fw.wk);
    const Var vp = diffmath::matmul(join(vparts), fw.wv);
    Var att = multihead_attention(tape, qp, kp, vp, heads, attn_rows);
    if (att.shape()[0] != k2) att = row_block(att, 0, k2);  // drop dt/ct rows
    outs.push_back(diffmath::matmul(att, fw.wo));
  }
  const Var tokens = outs.size() == 1 ? outs[0] : diffmath::concat(outs, 0);
  return window_reassemble(tokens_to_windows(tokens, n, k), h, w);
}

std::pair<Var, Var> condition_branch(Tape& tape, Var feat,
                                     const CondWeights& w, int heads) {
  if (!feat.valid() || feat.shape().size() != 3)
    throw ContractViolation("condition branch expects a [C,H,W] map");
  const int c = feat.shape()[0];
  const int t = feat.shape()[1] * feat.shape()[2];
  Var x = diffmath::transpose2d(diffmath::reshape(feat, {c, t}));
  x = linear_bias(tape, x, w.embed_w, w.embed_b);

  for (const CondLayerWeights& layer : w.enc) {
    const Var att = multihead_attention(
        tape, diffmath::matmul(x, layer.attn.wq),
        diffmath::matmul(x, layer.attn.wk), diffmath::matmul(x, layer.attn.wv),
        heads);
    x = layer_norm(tape, diffmath::add(x, diffmath::matmul(att, layer.attn.wo)),
                   layer.ln1);
    const Var mid = diffmath::relu(linear_bias(tape, x, layer.ffn.w1, layer.ffn.b1));
    x = layer_norm(tape,
                   diffmath::add(x, linear_bias(tape, mid, layer.ffn.w2, layer.ffn.b2)),
                   layer.ln2);
  }

  Var y = w.query;
  for (const CondLayerWeights& layer : w.dec) {
    const Var att = multihead_attention(
        tape, diffmath::matmul(y, layer.attn.wq),
        diffmath::matmul(x, layer.attn.wk), diffmath::matmul(x, layer.attn.wv),
        heads);
    y = layer_norm(tape, diffmath::add(y, diffmath::matmul(att, layer.attn.wo)),
                   layer.ln1);
    const Var mid = diffmath::relu(linear_bias(tape, y, layer.ffn.w1, layer.ffn.b1));
    y = layer_norm(tape,
                   diffmath::add(y, linear_bias(tape, mid, layer.ffn.w2, layer.ffn.b2)),
                   layer.ln2);
  }

  const int tw = w.query.shape()[1];
  const Var logits = linear_bias(tape, y, w.cls_w, w.cls_b);
  return {diffmath::reshape(y, {tw}),
          diffmath::reshape(logits, {w.cls_w.shape()[1]})};
}

}  // namespace dgf::fusenet
