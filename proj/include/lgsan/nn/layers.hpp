#pragma once

#include "lgsan/core/ops_conv.hpp"
#include "lgsan/core/ops_tokens.hpp"
#include "lgsan/core/rng.hpp"

namespace lgsan::nn {

// Named parameter/buffer registry. Collection order is deterministic and
// defines the checkpoint layout.
template <class S>
struct ParamMap {
  std::vector<std::pair<std::string, Var<S>>> params;
  std::vector<std::pair<std::string, Tensor<S>*>> buffers;

  void add(const std::string& name, const Var<S>& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor<S>* t) { buffers.emplace_back(name, t); }

  Index param_count() const {
    Index n = 0;
    for (auto& [k, v] : params) n += v.numel();
    return n;
  }

  const Var<S>* find(const std::string& name) const {
    for (auto& [k, v] : params)
      if (k == name) return &v;
    return nullptr;
  }
};

template <class S>
Tensor<S> randn_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * stddev);
  return t;
}

template <class S>
struct Conv2d {
  Var<S> weight, bias;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(Index in, Index out, int k, int stride_, Rng& rng, bool with_bias = true)
      : stride(stride_), pad(k / 2) {
    double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
    weight = Var<S>(randn_tensor<S>(Shape{out, in, k, k}, rng, std), true);
    if (with_bias) bias = Var<S>(Tensor<S>(Shape{out}), true);
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".weight", weight);
    if (bias.defined()) pm.add(prefix + ".bias", bias);
  }

  void zero_() {
    weight.value().set_zero();
    if (bias.defined()) bias.value().set_zero();
  }
};

template <class S>
struct Linear {
  Var<S> weight, bias;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool with_bias = true) {
    double std = std::sqrt(2.0 / static_cast<double>(in));
    weight = Var<S>(randn_tensor<S>(Shape{out, in}, rng, std), true);
    if (with_bias) bias = Var<S>(Tensor<S>(Shape{out}), true);
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }

  void collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".weight", weight);
    if (bias.defined()) pm.add(prefix + ".bias", bias);
  }
};

// BatchNorm over (N,H,W) per channel; batch statistics while training,
// running statistics at eval. Running buffers are checkpointed.
template <class S>
struct BatchNorm2d {
  Var<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);

  BatchNorm2d() = default;
  explicit BatchNorm2d(Index c) {
    gamma = Var<S>(Tensor<S>::full(Shape{c}, S(1)), true);
    beta = Var<S>(Tensor<S>(Shape{c}), true);
    running_mean = Tensor<S>(Shape{c});
    running_var = Tensor<S>::full(Shape{c}, S(1));
  }

  Var<S> operator()(const Var<S>& x, bool training) {
    Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Index n = B * HW;
    Tensor<S> mean(Shape{C}), var(Shape{C});
    if (training) {
      for (Index c = 0; c < C; ++c) {
        S m = S(0);
        for (Index b = 0; b < B; ++b) m += x.value().mat_at((b * C + c) * HW, 1, HW).sum();
        m /= S(n);
        S v = S(0);
        for (Index b = 0; b < B; ++b)
          v += (x.value().mat_at((b * C + c) * HW, 1, HW).array() - m).square().sum();
        v /= S(n);
        mean[c] = m;
        var[c] = v;
        running_mean[c] = (S(1) - momentum) * running_mean[c] + momentum * m;
        running_var[c] = (S(1) - momentum) * running_var[c] + momentum * v;
      }
    } else {
      mean = running_mean;
      var = running_var;
    }

    Tensor<S> y(x.shape());
    Tensor<S> inv_std(Shape{C});
    for (Index c = 0; c < C; ++c) inv_std[c] = S(1) / std::sqrt(var[c] + eps);
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        y.mat_at((b * C + c) * HW, 1, HW).array() =
            (x.value().mat_at((b * C + c) * HW, 1, HW).array() - mean[c]) * inv_std[c] *
                gamma.value()[c] +
            beta.value()[c];

    auto mean_p = std::make_shared<Tensor<S>>(std::move(mean));
    auto inv_p = std::make_shared<Tensor<S>>(std::move(inv_std));
    return Var<S>::make(std::move(y), {x, gamma, beta},
                        [mean_p, inv_p, training, B, C, HW, n](Node<S>& out) {
      auto& px = *out.parents[0];
      auto& pg = *out.parents[1];
      auto& pb = *out.parents[2];
      for (Index c = 0; c < C; ++c) {
        S m = (*mean_p)[c], istd = (*inv_p)[c];
        S gam = pg.value[c];
        S sum_g = S(0), sum_gx = S(0);
        for (Index b = 0; b < B; ++b) {
          auto g = out.grad.mat_at((b * C + c) * HW, 1, HW).array();
          auto xv = px.value.mat_at((b * C + c) * HW, 1, HW).array();
          sum_g += g.sum();
          sum_gx += (g * (xv - m)).sum();
        }
        if (pg.requires_grad) pg.grad[c] += sum_gx * istd;
        if (pb.requires_grad) pb.grad[c] += sum_g;
        if (!px.requires_grad) continue;
        if (training) {
          // dL/dx through batch statistics
          S k1 = gam * istd;
          S mg = sum_g / S(n);
          S mgx = sum_gx / S(n) * istd * istd;
          for (Index b = 0; b < B; ++b) {
            auto g = out.grad.mat_at((b * C + c) * HW, 1, HW).array();
            auto xv = px.value.mat_at((b * C + c) * HW, 1, HW).array();
            px.grad.mat_at((b * C + c) * HW, 1, HW).array() +=
                k1 * (g - mg - (xv - m) * mgx);
          }
        } else {
          S k1 = gam * istd;
          for (Index b = 0; b < B; ++b)
            px.grad.mat_at((b * C + c) * HW, 1, HW).array() +=
                k1 * out.grad.mat_at((b * C + c) * HW, 1, HW).array();
        }
      }
    });
  }

  void collect(ParamMap<S>& pm, const std::string& prefix) {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
    pm.add_buffer(prefix + ".running_mean", &running_mean);
    pm.add_buffer(prefix + ".running_var", &running_var);
  }
};

}  // namespace lgsan::nn
