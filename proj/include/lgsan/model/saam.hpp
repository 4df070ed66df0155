#pragma once

#include "lgsan/core/ops_spatial.hpp"
#include "lgsan/core/ops_tokens.hpp"
#include "lgsan/model/config.hpp"
#include "lgsan/nn/layers.hpp"

namespace lgsan {

template <class S>
struct GuidedQkv {
  Var<S> q, k, v;  // token arrays [B, HW, C']
};

struct AttentionStats {
  std::vector<Index> intermediate_numels;  // per-batch-element sizes
  Index peak() const {
    Index m = 0;
    for (Index n : intermediate_numels) m = std::max(m, n);
    return m;
  }
};

// Approximate attention: A = softmax over the token axis of K^T, then the
// C'xC' summary A.V, then Q.(A.V). No HW x HW matrix is ever formed.
template <class S>
Var<S> linear_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                        AttentionStats* stats = nullptr) {
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("linear_attention: token shapes differ");
  Index B = q.dim(0), N = q.dim(1), C = q.dim(2);
  auto kt = transpose12(k);        // [B, C, N]
  auto a = softmax_lastdim(kt);    // [B, C, N]
  auto av = bmm(a, v);             // [B, C, C]
  auto out = bmm(q, av);           // [B, N, C]
  if (stats) {
    stats->intermediate_numels = {kt.numel() / B, a.numel() / B, av.numel() / B,
                                  out.numel() / B};
    (void)N;
  }
  return out;
}

// Structure-Aware Attention Module: queries gated by semantic guidance,
// keys by edge guidance, linear attention, residual fusion.
template <class S>
struct Saam {
  nn::Conv2d<S> to_q, to_k, to_v;
  nn::Conv2d<S> proj_m, proj_e;
  nn::Conv2d<S> out_proj;  // bias-free so a zeroed attention branch is an exact identity

  Saam() = default;
  Saam(Index x_ch, Index m_ch, Index e_ch, Index dim, Rng& rng) {
    to_q = nn::Conv2d<S>(x_ch, dim, 1, 1, rng);
    to_k = nn::Conv2d<S>(x_ch, dim, 1, 1, rng);
    to_v = nn::Conv2d<S>(x_ch, dim, 1, 1, rng);
    proj_m = nn::Conv2d<S>(m_ch, dim, 1, 1, rng);
    proj_e = nn::Conv2d<S>(e_ch, dim, 1, 1, rng);
    out_proj = nn::Conv2d<S>(dim, x_ch, 1, 1, rng, /*with_bias=*/false);
  }

  GuidedQkv<S> guided_qkv(const Var<S>& x, const Var<S>& m, const Var<S>& e) const {
    Index H = x.dim(2), W = x.dim(3);
    auto mg = proj_m(resize_bilinear(m, H, W));
    auto eg = proj_e(resize_bilinear(e, H, W));
    GuidedQkv<S> out;
    out.q = l2_normalize_lastdim(to_tokens(to_q(x) * mg));
    out.k = l2_normalize_lastdim(to_tokens(to_k(x) * eg));
    out.v = to_tokens(to_v(x));
    return out;
  }

  Var<S> forward(const Var<S>& x, const Var<S>& m, const Var<S>& e,
                 AttentionStats* stats = nullptr) const {
    auto qkv = guided_qkv(x, m, e);
    auto att = linear_attention(qkv.q, qkv.k, qkv.v, stats);
    return x + out_proj(from_tokens(att, x.dim(2), x.dim(3)));
  }

  // test hook: switch off the value path entirely
  void zero_attention_branch() {
    to_v.weight.value().set_zero();
    if (to_v.bias.defined()) to_v.bias.value().set_zero();
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    to_q.collect(pm, p + ".to_q");
    to_k.collect(pm, p + ".to_k");
    to_v.collect(pm, p + ".to_v");
    proj_m.collect(pm, p + ".proj_m");
    proj_e.collect(pm, p + ".proj_e");
    out_proj.collect(pm, p + ".out_proj");
  }
};

}  // namespace lgsan
