#pragma once

#include "lgsan/core/ops_fft.hpp"
#include "lgsan/core/ops_spatial.hpp"
#include "lgsan/model/backbone.hpp"

namespace lgsan {

// X + sigmoid(BN(Conv1x1(X - AvgPool3x3(X)))). The weight map itself is
// added back, so (output - input) always lies in [0,1].
template <class S>
struct EdgeEnhancer {
  nn::Conv2d<S> conv;
  nn::BatchNorm2d<S> bn;
  PadMode pad_mode = PadMode::Zero;

  EdgeEnhancer() = default;
  EdgeEnhancer(Index c, PadMode mode, Rng& rng) : pad_mode(mode) {
    conv = nn::Conv2d<S>(c, c, 1, 1, rng);
    bn = nn::BatchNorm2d<S>(c);
  }

  Var<S> operator()(const Var<S>& x, bool training) {
    if (x.dim(2) < 3 || x.dim(3) < 3)
      throw ShapeError("edge_enhance: spatial size " + std::to_string(x.dim(2)) + "x" +
                       std::to_string(x.dim(3)) + " below the 3x3 pooling window");
    auto diff = x - avg_pool_same(x, 3, pad_mode);
    auto w_edge = sigmoid(bn(conv(diff), training));
    return x + w_edge;
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    conv.collect(pm, p + ".conv");
    bn.collect(pm, p + ".bn");
  }
};

template <class S>
struct EdgeFeature {
  Var<S> e;        // [B, Ce, H/4, W/4]
  Var<S> e_high;   // post-ReLU high-pass response (non-negative)
  Var<S> e_logit;  // [B, 1, H, W] edge prediction logit
};

// Fourier Edge Enhancement Module: top-down fusion with spatial edge
// enhancement, ideal radial high-pass in the frequency domain, and the
// channel-projected edge feature E.
template <class S>
struct Feem {
  nn::Conv2d<S> fuse4, fuse3, fuse2, fuse1;
  EdgeEnhancer<S> enh3, enh2, enh1;
  nn::Conv2d<S> reshape_conv;            // realizes the Reshape of the output stage
  nn::Conv2d<S> head_a, head_b;          // edge prediction head
  double cutoff_ratio = 0.25;

  Feem() = default;
  Feem(const ModelConfig& cfg, int attn_dim, Rng& rng) : cutoff_ratio(cfg.fft_cutoff_ratio) {
    const auto& c = cfg.backbone_channels;
    Index ce = cfg.feem_channels;
    PadMode mode = cfg.feem_padding_mode == "reflect" ? PadMode::Reflect : PadMode::Zero;
    fuse4 = nn::Conv2d<S>(c[3] + attn_dim, ce, 3, 1, rng);
    fuse3 = nn::Conv2d<S>(ce + c[2], ce, 3, 1, rng);
    fuse2 = nn::Conv2d<S>(ce + c[1], ce, 3, 1, rng);
    fuse1 = nn::Conv2d<S>(ce + c[0], ce, 3, 1, rng);
    enh3 = EdgeEnhancer<S>(ce, mode, rng);
    enh2 = EdgeEnhancer<S>(ce, mode, rng);
    enh1 = EdgeEnhancer<S>(ce, mode, rng);
    reshape_conv = nn::Conv2d<S>(ce, ce, 1, 1, rng);
    head_a = nn::Conv2d<S>(ce, ce, 3, 1, rng);
    head_b = nn::Conv2d<S>(ce, 1, 1, 1, rng);
  }

  static void check_scales(const PyramidFeatures<S>& p, const Var<S>& attn) {
    auto expect_half = [](const Var<S>& fine, const Var<S>& coarse, const char* stage) {
      if (fine.dim(2) != 2 * coarse.dim(2) || fine.dim(3) != 2 * coarse.dim(3))
        throw ShapeError(std::string("feem ") + stage + ": pyramid scale mismatch, " +
                         shape_str(fine.shape()) + " vs " + shape_str(coarse.shape()));
    };
    expect_half(p.f1, p.f2, "f2'");
    expect_half(p.f2, p.f3, "f3'");
    expect_half(p.f3, p.f4, "f4'");
    if (attn.dim(2) != p.f3.dim(2) || attn.dim(3) != p.f3.dim(3))
      throw ShapeError("feem f4': attn grid " + shape_str(attn.shape()) +
                       " must match the 1/16 pyramid level " + shape_str(p.f3.shape()));
  }

  // Eqs. (1)-(4); returns f1' at 1/4 scale
  Var<S> fuse_topdown(const PyramidFeatures<S>& p, const Var<S>& attn, bool training) {
    check_scales(p, attn);
    auto f4p = fuse4(concat_channels<S>({resize_like(p.f4, attn), attn}));
    auto f3p = enh3(fuse3(concat_channels<S>({f4p, p.f3})), training);
    auto f2p = enh2(fuse2(concat_channels<S>({resize_like(f3p, p.f2), p.f2})), training);
    auto f1p = enh1(fuse1(concat_channels<S>({resize_like(f2p, p.f1), p.f1})), training);
    return f1p;
  }

  EdgeFeature<S> forward(const PyramidFeatures<S>& p, const Var<S>& attn, bool training) {
    auto f1p = fuse_topdown(p, attn, training);
    EdgeFeature<S> out;
    out.e_high = relu(fft_highpass_linear(f1p, cutoff_ratio));
    out.e = reshape_conv(out.e_high);
    Index H = p.f1.dim(2) * 4, W = p.f1.dim(3) * 4;
    out.e_logit = resize_bilinear(head_b(gelu(head_a(out.e))), H, W);
    return out;
  }

  void collect(nn::ParamMap<S>& pm, const std::string& p) {
    fuse4.collect(pm, p + ".fuse4");
    fuse3.collect(pm, p + ".fuse3");
    fuse2.collect(pm, p + ".fuse2");
    fuse1.collect(pm, p + ".fuse1");
    enh3.collect(pm, p + ".enh3");
    enh2.collect(pm, p + ".enh2");
    enh1.collect(pm, p + ".enh1");
    reshape_conv.collect(pm, p + ".reshape_conv");
    head_a.collect(pm, p + ".head_a");
    head_b.collect(pm, p + ".head_b");
  }
};

}  // namespace lgsan
