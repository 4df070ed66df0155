#pragma once

#include <array>

#include "lgsan/core/ops_conv.hpp"
#include "lgsan/core/ops_spatial.hpp"
#include "lgsan/model/config.hpp"
#include "lgsan/nn/layers.hpp"

namespace lgsan {

// 2x2 spatial partition. Odd dims are zero-padded to even before the split
// and cropped back after the merge, so merge(split(x)) == x bitwise.
template <class S>
struct QuadSplit {
  std::array<Var<S>, 4> parts;  // top-left, top-right, bottom-left, bottom-right
  Index orig_h = 0, orig_w = 0;
};

template <class S>
QuadSplit<S> spatial_split(const Var<S>& x) {
  Index H = x.dim(2), W = x.dim(3);
  Index Hp = H + (H % 2), Wp = W + (W % 2);
  Var<S> padded = (Hp != H || Wp != W) ? pad_spatial(x, 0, Hp - H, 0, Wp - W) : x;
  Index h2 = Hp / 2, w2 = Wp / 2;
  QuadSplit<S> q;
  q.orig_h = H;
  q.orig_w = W;
  q.parts[0] = crop_spatial(padded, 0, 0, h2, w2);
  q.parts[1] = crop_spatial(padded, 0, w2, h2, w2);
  q.parts[2] = crop_spatial(padded, h2, 0, h2, w2);
  q.parts[3] = crop_spatial(padded, h2, w2, h2, w2);
  return q;
}

template <class S>
Var<S> spatial_merge(const QuadSplit<S>& q) {
  Index h2 = q.parts[0].dim(2), w2 = q.parts[0].dim(3);
  Index Hp = 2 * h2, Wp = 2 * w2;
  auto canvas = place_spatial(q.parts[0], 0, 0, Hp, Wp) +
                place_spatial(q.parts[1], 0, w2, Hp, Wp) +
                place_spatial(q.parts[2], h2, 0, Hp, Wp) +
                place_spatial(q.parts[3], h2, w2, Hp, Wp);
  if (Hp != q.orig_h || Wp != q.orig_w)
    return crop_spatial(canvas, 0, 0, q.orig_h, q.orig_w);
  return canvas;
}

// Coarse-Guided Local Refinement Module. Channel/spatial attention produce
// the global guidance g; the 2x2 partition is refined under sigmoid(g_i)
// gates, merged, fused with g, and added back residually.
template <class S>
struct Cglrm {
  nn::Conv2d<S> mlp1, mlp2;  // shared channel-attention MLP (1x1 convs)
  nn::Conv2d<S> sa_conv;     // 7x7 over [avg;max] channel stats
  std::vector<nn::Conv2d<S>> local;  // one shared or four per-quadrant 3x3 convs
  nn::Conv2d<S> fuse_conv;   // 3x3, 2C -> C
  nn::Conv2d<S> out_conv;    // 3x3, C -> C (output enhancement stage)
  bool shared_local = true;

  Cglrm() = default;
  Cglrm(Index c, const ModelConfig& cfg, Rng& rng) : shared_local(cfg.cglrm_shared_local_weights) {
    Index hidden = std::max<Index>(1, c / cfg.cglrm_reduction);
    mlp1 = nn::Conv2d<S>(c, hidden, 1, 1, rng);
    mlp2 = nn::Conv2d<S>(hidden, c, 1, 1, rng);
    sa_conv = nn::Conv2d<S>(2, 1, 7, 1, rng);
    local.resize(shared_local ? 1 : 4);
    for (auto& l : local) l = nn::Conv2d<S>(c, c, 3, 1, rng);
    fuse_conv = nn::Conv2d<S>(2 * c, c, 3, 1, rng);
    out_conv = nn::Conv2d<S>(c, c, 3, 1, rng);
  }

  // sigmoid(MLP(avgpool) + MLP(maxpool)), [B,C,1,1]
  Var<S> channel_attention(const Var<S>& x) const {
    auto branch = [&](const Var<S>& pooled) { return mlp2(relu(mlp1(pooled))); };
    return sigmoid(branch(global_avg_pool(x)) + branch(global_max_pool(x)));
  }

  // sigmoid(conv7x7([mean_c; max_c])), [B,1,H,W]
  Var<S> spatial_attention(const Var<S>& x) const {
    return sigmoid(sa_conv(concat_channels<S>({channel_mean(x), channel_max(x)})));
  }

  // g for given attention maps; exposed so tests can force ca/sa to ones
  Var<S> guidance_from(const Var<S>& x, const Var<S>& ca, const Var<S>& sa) const {
    auto x_ca = broadcast_mul(x, ca);
    return broadcast_mul(x_ca, sa);
  }

  Var<S> global_guidance(const Var<S>& x) const {
    auto ca = channel_attention(x);
    auto x_ca = broadcast_mul(x, ca);
    return broadcast_mul(x_ca, spatial_attention(x_ca));
  }

  // per-quadrant refinement given guidance (pre-fusion results)
  std::array<Var<S>, 4> refine_parts(const QuadSplit<S>& qx, const QuadSplit<S>& qg) const {
    std::array<Var<S>, 4> out;
    for (int i = 0; i < 4; ++i) {
      const auto& conv = shared_local ? local[0] : local[static_cast<size_t>(i)];
      out[static_cast<size_t>(i)] = gelu(conv(qx.parts[static_cast<size_t>(i)] *
                                              sigmoid(qg.parts[static_cast<size_t>(i)])));
    }
    return out;
  }

  Var<S> forward(const Var<S>& x) const {
    auto g = global_guidance(x);
    auto qx = spatial_split(x);
    auto qg = spatial_split(g);
    auto refined = refine_parts(qx, qg);
    QuadSplit<S> qr;
    qr.parts = refined;
    qr.orig_h = qx.orig_h;
    qr.orig_w = qx.orig_w;
    auto x_local = spatial_merge(qr);
    auto x_fuse = fuse_conv(concat_channels<S>({x_local, g}));
    return out_conv(x_fuse) + x;
  }

  // test hook: zero the output enhancement stage -> exact residual identity
  void zero_output_stage() {
    out_conv.weight.value().set_zero();
    if (out_conv.bias.defined()) out_conv.bias.value().set_zero();
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    mlp1.collect(pm, p + ".mlp1");
    mlp2.collect(pm, p + ".mlp2");
    sa_conv.collect(pm, p + ".sa_conv");
    for (size_t i = 0; i < local.size(); ++i)
      local[i].collect(pm, p + ".local" + std::to_string(i));
    fuse_conv.collect(pm, p + ".fuse");
    out_conv.collect(pm, p + ".out_conv");
  }
};

}  // namespace lgsan
