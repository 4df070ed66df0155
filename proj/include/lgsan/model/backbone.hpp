#pragma once

#include "lgsan/core/ops_conv.hpp"
#include "lgsan/model/config.hpp"
#include "lgsan/nn/layers.hpp"

namespace lgsan {

// Four-scale feature pyramid, fi at 1/(4*2^(i-1)) of the input.
template <class S>
struct PyramidFeatures {
  Var<S> f1, f2, f3, f4;
};

// Adapter contract for plugging in real pretrained weights; the built-in
// tiny pyramid below satisfies the same output contract.
template <class S>
struct PretrainedBackbone {
  virtual ~PretrainedBackbone() = default;
  virtual PyramidFeatures<S> extract(const Var<S>& image, bool training) = 0;
};

inline void check_pyramid_input(Index h, Index w) {
  if (h % 32 != 0 || w % 32 != 0)
    throw ShapeError("backbone: input " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be divisible by 32 (pad_to_multiple handles e.g. 521 -> 544)");
}

// CPU-scale stand-in for the pyramid encoder: stage 1 is two stride-2 convs,
// later stages one stride-2 conv each, all conv + BN + GELU.
template <class S>
struct TinyPyramidBackbone : PretrainedBackbone<S> {
  nn::Conv2d<S> stem_a, stem_b, down2, down3, down4;
  nn::BatchNorm2d<S> bn_a, bn_b, bn2, bn3, bn4;

  TinyPyramidBackbone() = default;
  TinyPyramidBackbone(const ModelConfig& cfg, Rng& rng) {
    const auto& c = cfg.backbone_channels;
    stem_a = nn::Conv2d<S>(3, c[0], 3, 2, rng);
    stem_b = nn::Conv2d<S>(c[0], c[0], 3, 2, rng);
    down2 = nn::Conv2d<S>(c[0], c[1], 3, 2, rng);
    down3 = nn::Conv2d<S>(c[1], c[2], 3, 2, rng);
    down4 = nn::Conv2d<S>(c[2], c[3], 3, 2, rng);
    bn_a = nn::BatchNorm2d<S>(c[0]);
    bn_b = nn::BatchNorm2d<S>(c[0]);
    bn2 = nn::BatchNorm2d<S>(c[1]);
    bn3 = nn::BatchNorm2d<S>(c[2]);
    bn4 = nn::BatchNorm2d<S>(c[3]);
  }

  PyramidFeatures<S> extract(const Var<S>& image, bool training) override {
    if (image.rank() != 4 || image.dim(1) != 3)
      throw ShapeError("backbone: expected BCHW image with 3 channels, got " +
                       shape_str(image.shape()));
    check_pyramid_input(image.dim(2), image.dim(3));
    PyramidFeatures<S> p;
    auto x = gelu(bn_a(stem_a(image), training));
    p.f1 = gelu(bn_b(stem_b(x), training));
    p.f2 = gelu(bn2(down2(p.f1), training));
    p.f3 = gelu(bn3(down3(p.f2), training));
    p.f4 = gelu(bn4(down4(p.f3), training));
    return p;
  }

  void collect(nn::ParamMap<S>& pm, const std::string& prefix) {
    stem_a.collect(pm, prefix + ".stem_a");
    bn_a.collect(pm, prefix + ".bn_a");
    stem_b.collect(pm, prefix + ".stem_b");
    bn_b.collect(pm, prefix + ".bn_b");
    down2.collect(pm, prefix + ".down2");
    bn2.collect(pm, prefix + ".bn2");
    down3.collect(pm, prefix + ".down3");
    bn3.collect(pm, prefix + ".bn3");
    down4.collect(pm, prefix + ".down4");
    bn4.collect(pm, prefix + ".bn4");
  }
};

}  // namespace lgsan
