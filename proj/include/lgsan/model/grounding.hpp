#pragma once

#include <cctype>
#include <optional>

#include "lgsan/core/ops_spatial.hpp"
#include "lgsan/core/ops_tokens.hpp"
#include "lgsan/model/config.hpp"
#include "lgsan/nn/layers.hpp"

namespace lgsan {

template <class S>
struct TextEmbedding {
  Tensor<S> vector;  // unit L2 norm, [text_dim]
  std::string prompt;
};

inline std::string prompt_category(const std::string& prompt) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : prompt) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else if (!cur.empty()) {
      toks.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  if (toks.empty()) throw ValidationError("encode_prompt: prompt has no category token");
  for (size_t i = 0; i + 1 < toks.size(); ++i)
    if (toks[i] == "camouflaged") return toks[i + 1];
  return toks.back();
}

// Seeded hash projection of the category token onto the unit sphere.
template <class S>
TextEmbedding<S> encode_prompt(const std::string& prompt, int text_dim,
                               std::uint64_t provider_seed) {
  if (prompt.empty()) throw ValidationError("encode_prompt: empty prompt");
  std::string cat = prompt_category(prompt);
  Rng rng(Rng::hash_string(cat, provider_seed));
  Tensor<S> v(Shape{text_dim});
  for (Index i = 0; i < text_dim; ++i) v[i] = static_cast<S>(rng.normal());
  double n = std::sqrt(static_cast<double>((v.flat() * v.flat()).sum()));
  if (n == 0) v[0] = S(1);
  else v.flat() /= static_cast<S>(n);
  return {std::move(v), prompt};
}

// residual mask gating: feature .* (1 + m1 resized to the feature grid)
template <class S>
Var<S> mgfa(const Var<S>& feature, const Var<S>& m1) {
  auto m = resize_bilinear(m1, feature.dim(2), feature.dim(3));
  return broadcast_mul(feature, m + S(1));
}

template <class S>
struct GroundingOutput {
  Var<S> attn_vis;  // fused visual features at 1/16 scale
  Var<S> m1_logit;  // [B,1,H,W]
  Var<S> m1;        // sigmoid(m1_logit)
};

// pre-norm single-head transformer block
template <class S>
struct TransformerBlock {
  Var<S> ln1_g, ln1_b, ln2_g, ln2_b;
  nn::Linear<S> q, k, v, proj, mlp_in, mlp_out;
  Index dim = 0;

  TransformerBlock() = default;
  TransformerBlock(Index c, Rng& rng) : dim(c) {
    ln1_g = Var<S>(Tensor<S>::full(Shape{c}, S(1)), true);
    ln1_b = Var<S>(Tensor<S>(Shape{c}), true);
    ln2_g = Var<S>(Tensor<S>::full(Shape{c}, S(1)), true);
    ln2_b = Var<S>(Tensor<S>(Shape{c}), true);
    q = nn::Linear<S>(c, c, rng);
    k = nn::Linear<S>(c, c, rng);
    v = nn::Linear<S>(c, c, rng);
    proj = nn::Linear<S>(c, c, rng);
    mlp_in = nn::Linear<S>(c, 2 * c, rng);
    mlp_out = nn::Linear<S>(2 * c, c, rng);
  }

  // tokens [B,N,C]; optionally exposes the softmax attention matrix
  Var<S> operator()(const Var<S>& x, Tensor<S>* attn_out = nullptr) const {
    auto h = layer_norm_lastdim(x, ln1_g, ln1_b);
    S scale = S(1) / std::sqrt(static_cast<S>(dim));
    auto scores = bmm(q(h), transpose12(k(h))) * scale;  // [B,N,N]
    auto attn = softmax_lastdim(scores);
    if (attn_out) *attn_out = attn.value();
    auto y = x + proj(bmm(attn, v(h)));
    auto h2 = layer_norm_lastdim(y, ln2_g, ln2_b);
    return y + mlp_out(gelu(mlp_in(h2)));
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    pm.add(p + ".ln1_g", ln1_g);
    pm.add(p + ".ln1_b", ln1_b);
    pm.add(p + ".ln2_g", ln2_g);
    pm.add(p + ".ln2_b", ln2_b);
    q.collect(pm, p + ".q");
    k.collect(pm, p + ".k");
    v.collect(pm, p + ".v");
    proj.collect(pm, p + ".proj");
    mlp_in.collect(pm, p + ".mlp_in");
    mlp_out.collect(pm, p + ".mlp_out");
  }
};

// Self-contained stand-in for the frozen CLIP pair: a small shared conv
// trunk with three taps, FPN-style fusion to the 1/16 grid, and a text-
// conditioned up-convolution decoder producing the object mask.
template <class S>
struct SyntheticGrounder {
  nn::Conv2d<S> stem_a, stem_b, tap1, tap2, tap3;
  nn::Conv2d<S> lat1, lat2, lat3, fpn_fuse;
  nn::Conv2d<S> dec1, dec2, mask_head;
  nn::Linear<S> film1, film2;
  std::vector<TransformerBlock<S>> blocks;
  int text_dim = 0;

  SyntheticGrounder() = default;
  SyntheticGrounder(const ModelConfig& cfg, Rng& rng) : text_dim(cfg.text_dim) {
    int w = cfg.grounding_width, a = cfg.attn_dim;
    stem_a = nn::Conv2d<S>(3, w, 3, 2, rng);
    stem_b = nn::Conv2d<S>(w, w, 3, 2, rng);
    tap1 = nn::Conv2d<S>(w, w, 3, 2, rng);
    tap2 = nn::Conv2d<S>(w, w, 3, 2, rng);
    tap3 = nn::Conv2d<S>(w, w, 3, 2, rng);
    lat1 = nn::Conv2d<S>(w, a, 1, 1, rng);
    lat2 = nn::Conv2d<S>(w, a, 1, 1, rng);
    lat3 = nn::Conv2d<S>(w, a, 1, 1, rng);
    fpn_fuse = nn::Conv2d<S>(a, a, 3, 1, rng);
    dec1 = nn::Conv2d<S>(a, a, 3, 1, rng);
    dec2 = nn::Conv2d<S>(a, a, 3, 1, rng);
    mask_head = nn::Conv2d<S>(a, 1, 1, 1, rng);
    film1 = nn::Linear<S>(cfg.text_dim, 2 * a, rng);
    film2 = nn::Linear<S>(cfg.text_dim, 2 * a, rng);
    for (int d = 0; d < cfg.transformer_depth; ++d) blocks.emplace_back(a, rng);
  }

  Var<S> film(const Var<S>& x, const nn::Linear<S>& f, const Var<S>& text) const {
    Index C = x.dim(1);
    auto st = f(text);  // [B, 2C]
    auto scale = reshape(slice_lastdim(st, 0, C), Shape{x.dim(0), C, 1, 1});
    auto shift = reshape(slice_lastdim(st, C, C), Shape{x.dim(0), C, 1, 1});
    return broadcast_add(broadcast_mul(x, scale + S(1)), shift);
  }

  GroundingOutput<S> ground(const Var<S>& image, const Var<S>& text) const {
    Index H = image.dim(2), W = image.dim(3);
    auto t0 = gelu(stem_b(gelu(stem_a(image))));  // 1/4
    auto t1 = gelu(tap1(t0));                     // 1/8
    auto t2 = gelu(tap2(t1));                     // 1/16
    auto t3 = gelu(tap3(t2));                     // 1/32
    auto p2 = lat2(t2);
    auto fused = p2 + resize_like(lat3(t3), p2) + resize_like(lat1(t1), p2);
    auto attn_vis = gelu(fpn_fuse(fused));  // [B, attn_dim, H/16, W/16]

    auto d = gelu(film(dec1(attn_vis), film1, text));
    d = resize_bilinear(d, attn_vis.dim(2) * 2, attn_vis.dim(3) * 2);  // 1/8
    d = gelu(film(dec2(d), film2, text));
    d = resize_bilinear(d, attn_vis.dim(2) * 4, attn_vis.dim(3) * 4);  // 1/4
    auto logit = resize_bilinear(mask_head(d), H, W);
    GroundingOutput<S> out;
    out.attn_vis = attn_vis;
    out.m1_logit = logit;
    out.m1 = sigmoid(logit);
    return out;
  }

  // transformer over gated visual tokens; shape preserved
  Var<S> token_transform(const Var<S>& attn1, Tensor<S>* attn_weights = nullptr) const {
    Index H = attn1.dim(2), W = attn1.dim(3);
    auto x = to_tokens(attn1);
    for (size_t i = 0; i < blocks.size(); ++i)
      x = blocks[i](x, i == 0 ? attn_weights : nullptr);
    return from_tokens(x, H, W);
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    stem_a.collect(pm, p + ".stem_a");
    stem_b.collect(pm, p + ".stem_b");
    tap1.collect(pm, p + ".tap1");
    tap2.collect(pm, p + ".tap2");
    tap3.collect(pm, p + ".tap3");
    lat1.collect(pm, p + ".lat1");
    lat2.collect(pm, p + ".lat2");
    lat3.collect(pm, p + ".lat3");
    fpn_fuse.collect(pm, p + ".fpn_fuse");
    dec1.collect(pm, p + ".dec1");
    dec2.collect(pm, p + ".dec2");
    mask_head.collect(pm, p + ".mask_head");
    film1.collect(pm, p + ".film1");
    film2.collect(pm, p + ".film2");
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(pm, p + ".block" + std::to_string(i));
  }
};

}  // namespace lgsan
