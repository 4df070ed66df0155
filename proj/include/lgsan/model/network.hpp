#pragma once

#include <optional>

#include "lgsan/model/backbone.hpp"
#include "lgsan/model/cglrm.hpp"
#include "lgsan/model/feem.hpp"
#include "lgsan/model/grounding.hpp"
#include "lgsan/model/saam.hpp"

namespace lgsan {

// The six sigmoid-space outputs; logits are kept so losses stay stable.
// m1/oe are absent under the matching ablation flags.
template <class S>
struct PredictionSet {
  Var<S> o1, o2, o3, o4;
  std::optional<Var<S>> m1, oe;

  std::vector<std::pair<std::string, Tensor<S>>> probability_maps() const {
    NoGradGuard ng;
    std::vector<std::pair<std::string, Tensor<S>>> out;
    auto push = [&](const std::string& n, const Var<S>& v) {
      out.emplace_back(n, sigmoid(Var<S>(v.value())).value());
    };
    push("o1", o1);
    push("o2", o2);
    push("o3", o3);
    push("o4", o4);
    if (m1) push("m1", *m1);
    if (oe) push("oe", *oe);
    return out;
  }
};

struct StageStat {
  std::string name;
  Shape shape;
  double mean = 0, stddev = 0, min = 0, max = 0;
};

struct ForwardTrace {
  std::vector<StageStat> stages;
  std::vector<std::string> warnings;
};

template <class S>
void trace_stage(ForwardTrace* tr, const std::string& name, const Var<S>& v) {
  if (!tr) return;
  StageStat st;
  st.name = name;
  st.shape = v.shape();
  double n = static_cast<double>(v.numel());
  double mean = v.value().flat().template cast<double>().mean();
  double var = (v.value().flat().template cast<double>() - mean).square().sum() / n;
  st.mean = mean;
  st.stddev = std::sqrt(var);
  st.min = static_cast<double>(v.value().flat().minCoeff());
  st.max = static_cast<double>(v.value().flat().maxCoeff());
  tr->stages.push_back(std::move(st));
}

// ---- objective ----

template <class S>
void validate_binary(const Tensor<S>& gt, const char* what) {
  for (Index i = 0; i < gt.numel(); ++i)
    if (gt[i] != S(0) && gt[i] != S(1))
      throw ValidationError(std::string(what) + ": ground truth must be binary {0,1}, found " +
                            std::to_string(static_cast<double>(gt[i])));
}

// boundary-weight window scaled from the reference 31 at full resolution
inline int structure_window(Index h) {
  int w = std::max<int>(3, static_cast<int>(h / 17));
  if (w % 2 == 0) ++w;
  return w;
}

// weighted BCE + weighted IoU with w = 1 + 5*|AvgPool_k(gt) - gt|
template <class S>
Var<S> weighted_structure_loss(const Var<S>& logit, const Tensor<S>& gt, int window = 0) {
  if (logit.shape() != gt.shape())
    throw ShapeError("structure_loss: " + shape_str(logit.shape()) + " vs gt " +
                     shape_str(gt.shape()));
  validate_binary(gt, "structure_loss");
  if (window == 0) window = structure_window(gt.dim(2));
  Index B = gt.dim(0);

  Tensor<S> wmap;
  {
    NoGradGuard ng;
    Var<S> g(gt);
    auto w = abs_v(avg_pool_same(g, window, PadMode::Zero) - g) * S(5) + S(1);
    wmap = w.value();
  }
  Var<S> w(wmap);
  Var<S> g(gt);

  auto wsum = sum_chw(w);                                // [B,1,1,1]
  auto wbce = sum_chw(bce_with_logits(logit, g) * w) / wsum;
  auto p = sigmoid(logit);
  auto inter = sum_chw(p * g * w);
  auto uni = sum_chw((p + g) * w);
  auto wiou = ((inter + S(1)) / (uni - inter + S(1))) * S(-1) + S(1);
  return sum_all(wbce + wiou) * (S(1) / S(B));
}

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), p = sigmoid(logit)
template <class S>
Var<S> dice_loss(const Var<S>& logit, const Tensor<S>& gt, S eps = S(1e-6)) {
  if (logit.shape() != gt.shape())
    throw ShapeError("dice_loss: " + shape_str(logit.shape()) + " vs gt " + shape_str(gt.shape()));
  Index B = gt.dim(0);
  Var<S> g(gt);
  auto p = sigmoid(logit);
  auto num = sum_chw(p * g) * S(2) + eps;
  auto den = sum_chw(p) + sum_chw(g) + eps;
  auto dice = (num / den) * S(-1) + S(1);
  return sum_all(dice) * (S(1) / S(B));
}

template <class S>
struct LossBreakdown {
  Var<S> total;
  std::vector<std::pair<std::string, double>> components;
  std::vector<std::string> dropped;
  double lambda = 0;

  double value(const std::string& name) const {
    for (auto& [k, v] : components)
      if (k == name) return v;
    return 0;
  }
};

template <class S>
LossBreakdown<S> total_loss(const PredictionSet<S>& preds, const Tensor<S>& gt_mask,
                            const Tensor<S>& gt_edge, S lambda) {
  if (lambda < S(0)) throw ConfigError("lambda must be >= 0");
  LossBreakdown<S> lb;
  lb.lambda = static_cast<double>(lambda);
  Var<S> total;
  auto add_term = [&](const std::string& name, Var<S> term, S weight) {
    lb.components.emplace_back(name, static_cast<double>(term.value()[0]));
    Var<S> weighted = (weight == S(1)) ? term : term * weight;
    total = total.defined() ? total + weighted : weighted;
  };
  add_term("structure_o1", weighted_structure_loss(preds.o1, gt_mask), S(1));
  add_term("structure_o2", weighted_structure_loss(preds.o2, gt_mask), S(1));
  add_term("structure_o3", weighted_structure_loss(preds.o3, gt_mask), S(1));
  add_term("structure_o4", weighted_structure_loss(preds.o4, gt_mask), S(1));
  if (preds.m1)
    add_term("structure_m1", weighted_structure_loss(*preds.m1, gt_mask), S(1));
  else
    lb.dropped.push_back("structure_m1");
  if (preds.oe)
    add_term("dice_oe", dice_loss(*preds.oe, gt_edge), lambda);
  else
    lb.dropped.push_back("dice_oe");
  lb.total = total;
  lb.components.emplace_back("total", static_cast<double>(total.value()[0]));
  return lb;
}

// ---- full network ----

// prediction head: 3x3 conv -> 1x1 conv to one logit channel
template <class S>
struct Head {
  nn::Conv2d<S> a, b;
  Head() = default;
  Head(Index c, Rng& rng) {
    a = nn::Conv2d<S>(c, c, 3, 1, rng);
    b = nn::Conv2d<S>(c, 1, 1, 1, rng);
  }
  Var<S> operator()(const Var<S>& x) const { return b(gelu(a(x))); }
  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    a.collect(pm, p + ".a");
    b.collect(pm, p + ".b");
  }
};

// plain conv decode block, used when the SC stage is ablated away
template <class S>
struct PlainBlock {
  nn::Conv2d<S> a, b;
  PlainBlock() = default;
  PlainBlock(Index c, Rng& rng) {
    a = nn::Conv2d<S>(c, c, 3, 1, rng);
    b = nn::Conv2d<S>(c, c, 3, 1, rng);
  }
  Var<S> operator()(const Var<S>& x) const { return gelu(b(gelu(a(x)))); }
  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    a.collect(pm, p + ".a");
    b.collect(pm, p + ".b");
  }
};

template <class S>
struct Lgsan {
  ModelConfig cfg;
  AblationFlags flags;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  TinyPyramidBackbone<S> backbone;
  std::shared_ptr<PretrainedBackbone<S>> adapter;  // optional external backbone
  std::optional<SyntheticGrounder<S>> grounder;
  nn::Conv2d<S> attn_standin;  // visual-only path when grounding is off
  std::optional<Feem<S>> feem;

  nn::Conv2d<S> comp4, comp3, comp2, comp1;
  std::optional<Cglrm<S>> refine4a, refine4b, refine3, refine2, refine1;
  std::optional<Saam<S>> attend4, attend3, attend2, attend1;
  std::optional<PlainBlock<S>> plain4, plain3, plain2, plain1;
  Head<S> head1, head2, head3, head4;

  Lgsan() = default;
  Lgsan(const ModelConfig& cfg_, AblationFlags flags_, std::uint64_t seed_)
      : cfg(cfg_), flags(flags_), seed(seed_) {
    Rng rng(Rng::mix(seed, 0x16a5));
    backbone = TinyPyramidBackbone<S>(cfg, rng);
    const auto& bc = cfg.backbone_channels;
    Index cd = cfg.decoder_channels;
    Index ce = cfg.feem_channels;
    Index ca = cfg.attn_dim;

    if (flags.grounding) grounder.emplace(cfg, rng);
    else attn_standin = nn::Conv2d<S>(bc[3], ca, 3, 1, rng);
    if (flags.feem) feem.emplace(cfg, ca, rng);
    if (flags.sc && !flags.feem)
      warnings.push_back(
          "flags: SC without E - SAAM runs with a zero edge map (no FEEM features)");

    comp4 = nn::Conv2d<S>(bc[3] + ca, cd, 3, 1, rng);
    comp3 = nn::Conv2d<S>(cd + bc[2], cd, 3, 1, rng);
    comp2 = nn::Conv2d<S>(cd + bc[1], cd, 3, 1, rng);
    comp1 = nn::Conv2d<S>(cd + bc[0], cd, 3, 1, rng);

    if (flags.sc) {
      refine4a.emplace(cd, cfg, rng);
      attend4.emplace(cd, ca, ce, cfg.saam_dim, rng);
      refine4b.emplace(cd, cfg, rng);
      attend3.emplace(cd, cd, ce, cfg.saam_dim, rng);
      refine3.emplace(cd, cfg, rng);
      attend2.emplace(cd, cd, ce, cfg.saam_dim, rng);
      refine2.emplace(cd, cfg, rng);
      attend1.emplace(cd, cd, ce, cfg.saam_dim, rng);
      refine1.emplace(cd, cfg, rng);
    } else {
      plain4.emplace(cd, rng);
      plain3.emplace(cd, rng);
      plain2.emplace(cd, rng);
      plain1.emplace(cd, rng);
    }
    head1 = Head<S>(cd, rng);
    head2 = Head<S>(cd, rng);
    head3 = Head<S>(cd, rng);
    head4 = Head<S>(ca, rng);
  }

  // batched text embeddings for the prompts (unused when grounding is off)
  Tensor<S> embed_prompts(const std::vector<std::string>& prompts) const {
    Tensor<S> t(Shape{static_cast<Index>(prompts.size()), cfg.text_dim});
    for (size_t i = 0; i < prompts.size(); ++i) {
      auto e = encode_prompt<S>(prompts[i], cfg.text_dim, seed);
      std::copy(e.vector.data(), e.vector.data() + cfg.text_dim,
                t.data() + static_cast<Index>(i) * cfg.text_dim);
    }
    return t;
  }

  PredictionSet<S> forward(const Var<S>& image, const std::vector<std::string>& prompts,
                           bool training, ForwardTrace* trace = nullptr) {
    Index H = image.dim(2), W = image.dim(3);
    if (cfg.pad_to_multiple && (H % 32 != 0 || W % 32 != 0)) {
      Index Hp = (H + 31) / 32 * 32, Wp = (W + 31) / 32 * 32;
      Index pt = (Hp - H) / 2, pl = (Wp - W) / 2;
      auto padded = pad_spatial(image, pt, Hp - H - pt, pl, Wp - W - pl);
      auto preds = forward_core(padded, prompts, training, trace);
      auto crop = [&](const Var<S>& v) { return crop_spatial(v, pt, pl, H, W); };
      PredictionSet<S> out;
      out.o1 = crop(preds.o1);
      out.o2 = crop(preds.o2);
      out.o3 = crop(preds.o3);
      out.o4 = crop(preds.o4);
      if (preds.m1) out.m1 = crop(*preds.m1);
      if (preds.oe) out.oe = crop(*preds.oe);
      return out;
    }
    return forward_core(image, prompts, training, trace);
  }

  PredictionSet<S> forward_core(const Var<S>& image, const std::vector<std::string>& prompts,
                                bool training, ForwardTrace* trace) {
    Index H = image.dim(2), W = image.dim(3);
    if (trace)
      for (const auto& w : warnings) trace->warnings.push_back(w);

    PyramidFeatures<S> pyr =
        adapter ? adapter->extract(image, training) : backbone.extract(image, training);
    trace_stage(trace, "f1", pyr.f1);
    trace_stage(trace, "f4", pyr.f4);

    Var<S> attn;
    std::optional<Var<S>> m1_logit;
    if (flags.grounding) {
      if (prompts.size() != static_cast<size_t>(image.dim(0)))
        throw ValidationError("forward: need one prompt per batch item when grounding is on");
      Var<S> text(embed_prompts(prompts));
      auto gr = grounder->ground(image, text);
      m1_logit = gr.m1_logit;
      pyr.f1 = mgfa(pyr.f1, gr.m1);
      pyr.f2 = mgfa(pyr.f2, gr.m1);
      pyr.f3 = mgfa(pyr.f3, gr.m1);
      pyr.f4 = mgfa(pyr.f4, gr.m1);
      auto attn1 = mgfa(gr.attn_vis, gr.m1);
      attn = grounder->token_transform(attn1);
      trace_stage(trace, "m1", gr.m1);
    } else {
      attn = gelu(attn_standin(resize_bilinear(pyr.f4, pyr.f3.dim(2), pyr.f3.dim(3))));
    }
    trace_stage(trace, "attn", attn);

    std::optional<Var<S>> oe_logit;
    Var<S> edge_feat;
    if (flags.feem) {
      auto ef = feem->forward(pyr, attn, training);
      edge_feat = ef.e;
      oe_logit = ef.e_logit;
      trace_stage(trace, "E", ef.e);
    } else if (flags.sc) {
      edge_feat = Var<S>(Tensor<S>(Shape{image.dim(0), cfg.feem_channels, H / 4, W / 4}));
    }

    auto t4 = comp4(concat_channels<S>({resize_like(pyr.f4, pyr.f3), attn}));
    Var<S> cam4 = flags.sc
                      ? refine4b->forward(attend4->forward(refine4a->forward(t4), attn, edge_feat))
                      : (*plain4)(t4);
    trace_stage(trace, "cam4", cam4);

    auto decode = [&](const Var<S>& cam_prev, const Var<S>& fi, const nn::Conv2d<S>& comp,
                      std::optional<Saam<S>>& att, std::optional<Cglrm<S>>& ref,
                      std::optional<PlainBlock<S>>& plain) {
      auto fbar = comp(concat_channels<S>({resize_like(cam_prev, fi), fi}));
      if (flags.sc) return ref->forward(att->forward(fbar, cam_prev, edge_feat));
      return (*plain)(fbar);
    };
    auto cam3 = decode(cam4, pyr.f3, comp3, attend3, refine3, plain3);
    auto cam2 = decode(cam3, pyr.f2, comp2, attend2, refine2, plain2);
    auto cam1 = decode(cam2, pyr.f1, comp1, attend1, refine1, plain1);
    trace_stage(trace, "cam1", cam1);

    PredictionSet<S> out;
    out.o1 = resize_bilinear(head1(cam1), H, W);
    out.o2 = resize_bilinear(head2(cam2), H, W);
    out.o3 = resize_bilinear(head3(cam3), H, W);
    out.o4 = resize_bilinear(head4(attn), H, W);
    if (m1_logit) out.m1 = m1_logit;
    if (oe_logit) out.oe = oe_logit;
    return out;
  }

  void collect(nn::ParamMap<S>& pm) {
    backbone.collect(pm, "backbone");
    if (grounder) grounder->collect(pm, "grounder");
    else attn_standin.collect(pm, "attn_standin");
    if (feem) feem->collect(pm, "feem");
    comp4.collect(pm, "comp4");
    comp3.collect(pm, "comp3");
    comp2.collect(pm, "comp2");
    comp1.collect(pm, "comp1");
    if (flags.sc) {
      refine4a->collect(pm, "refine4a");
      attend4->collect(pm, "attend4");
      refine4b->collect(pm, "refine4b");
      attend3->collect(pm, "attend3");
      refine3->collect(pm, "refine3");
      attend2->collect(pm, "attend2");
      refine2->collect(pm, "refine2");
      attend1->collect(pm, "attend1");
      refine1->collect(pm, "refine1");
    } else {
      plain4->collect(pm, "plain4");
      plain3->collect(pm, "plain3");
      plain2->collect(pm, "plain2");
      plain1->collect(pm, "plain1");
    }
    head1.collect(pm, "head1");
    head2.collect(pm, "head2");
    head3.collect(pm, "head3");
    head4.collect(pm, "head4");
  }
};

}  // namespace lgsan
