#pragma once

#include <cmath>

#include "lgsan/core/autograd.hpp"

namespace lgsan {

namespace detail {

// strides for broadcast iteration over rank-4 shapes (dim==1 -> stride 0)
inline void bcast_strides(const Shape& s, Index st[4]) {
  Index full[4] = {1, 1, 1, 1};
  int off = 4 - static_cast<int>(s.size());
  for (int i = 0; i < static_cast<int>(s.size()); ++i) full[off + i] = s[static_cast<size_t>(i)];
  Index acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (full[i] == 1) ? 0 : acc;
    acc *= full[i];
  }
}

inline Shape pad4(const Shape& s) {
  Shape r{1, 1, 1, 1};
  int off = 4 - static_cast<int>(s.size());
  for (int i = 0; i < static_cast<int>(s.size()); ++i) r[static_cast<size_t>(off + i)] = s[static_cast<size_t>(i)];
  return r;
}

inline void check_broadcastable(const Shape& x, const Shape& m, const char* op) {
  Shape a = pad4(x), b = pad4(m);
  for (int i = 0; i < 4; ++i)
    if (b[static_cast<size_t>(i)] != 1 && b[static_cast<size_t>(i)] != a[static_cast<size_t>(i)])
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(m) + " over " + shape_str(x));
}

}  // namespace detail

// ---- same-shape elementwise ----

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() + b.value().flat();
  return Var<S>::make(std::move(y), {a, b}, [](Node<S>& out) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *out.parents[static_cast<size_t>(k)];
      if (p.requires_grad) p.grad.flat() += out.grad.flat();
    }
  });
}

template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() - b.value().flat();
  return Var<S>::make(std::move(y), {a, b}, [](Node<S>& out) {
    auto& pa = *out.parents[0];
    auto& pb = *out.parents[1];
    if (pa.requires_grad) pa.grad.flat() += out.grad.flat();
    if (pb.requires_grad) pb.grad.flat() -= out.grad.flat();
  });
}

template <class S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() * b.value().flat();
  return Var<S>::make(std::move(y), {a, b}, [](Node<S>& out) {
    auto& pa = *out.parents[0];
    auto& pb = *out.parents[1];
    if (pa.requires_grad) pa.grad.flat() += out.grad.flat() * pb.value.flat();
    if (pb.requires_grad) pb.grad.flat() += out.grad.flat() * pa.value.flat();
  });
}

template <class S>
Var<S> operator*(const Var<S>& a, S s) {
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() * s;
  return Var<S>::make(std::move(y), {a}, [s](Node<S>& out) {
    auto& p = *out.parents[0];
    if (p.requires_grad) p.grad.flat() += out.grad.flat() * s;
  });
}

template <class S>
Var<S> operator+(const Var<S>& a, S s) {
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() + s;
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (p.requires_grad) p.grad.flat() += out.grad.flat();
  });
}

// elementwise division (used by the IoU/dice ratio terms)
template <class S>
Var<S> operator/(const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError("div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat() / b.value().flat();
  return Var<S>::make(std::move(y), {a, b}, [](Node<S>& out) {
    auto& pa = *out.parents[0];
    auto& pb = *out.parents[1];
    if (pa.requires_grad) pa.grad.flat() += out.grad.flat() / pb.value.flat();
    if (pb.requires_grad)
      pb.grad.flat() -= out.grad.flat() * out.value.flat() / pb.value.flat();
  });
}

// ---- activations ----

template <class S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat().max(S(0));
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    p.grad.flat() += out.grad.flat() * (p.value.flat() > S(0)).template cast<S>();
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> y(a.shape());
  y.flat() = S(1) / (S(1) + (-a.value().flat()).exp());
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    p.grad.flat() += out.grad.flat() * out.value.flat() * (S(1) - out.value.flat());
  });
}

// exact erf-based GELU; smooth everywhere, which keeps finite-difference
// gradient checks clean
template <class S>
Var<S> gelu(const Var<S>& a) {
  const S inv_sqrt2 = S(0.70710678118654752440L);
  Tensor<S> y(a.shape());
  {
    auto x = a.value().flat();
    auto out = y.flat();
    for (Index i = 0; i < a.numel(); ++i)
      out[i] = S(0.5) * x[i] * (S(1) + std::erf(x[i] * inv_sqrt2));
  }
  return Var<S>::make(std::move(y), {a}, [inv_sqrt2](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    const S inv_sqrt2pi = S(0.39894228040143267794L);
    auto x = p.value.flat();
    auto g = out.grad.flat();
    auto dx = p.grad.flat();
    for (Index i = 0; i < p.value.numel(); ++i) {
      S phi = S(0.5) * (S(1) + std::erf(x[i] * inv_sqrt2));
      S dens = inv_sqrt2pi * std::exp(S(-0.5) * x[i] * x[i]);
      dx[i] += g[i] * (phi + x[i] * dens);
    }
  });
}

template <class S>
Var<S> abs_v(const Var<S>& a) {
  Tensor<S> y(a.shape());
  y.flat() = a.value().flat().abs();
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    p.grad.flat() += out.grad.flat() * p.value.flat().sign();
  });
}

// numerically stable elementwise BCE-with-logits
template <class S>
Var<S> bce_with_logits(const Var<S>& logit, const Var<S>& target) {
  if (!logit.value().same_shape(target.value()))
    throw ShapeError("bce: shape mismatch");
  Tensor<S> y(logit.shape());
  {
    auto z = logit.value().flat();
    auto t = target.value().flat();
    auto out = y.flat();
    for (Index i = 0; i < y.numel(); ++i)
      out[i] = std::max(z[i], S(0)) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return Var<S>::make(std::move(y), {logit, target}, [](Node<S>& out) {
    auto& pz = *out.parents[0];
    auto& pt = *out.parents[1];
    auto z = pz.value.flat();
    if (pz.requires_grad) {
      auto t = pt.value.flat();
      pz.grad.flat() += out.grad.flat() * (S(1) / (S(1) + (-z).exp()) - t);
    }
    if (pt.requires_grad) pt.grad.flat() -= out.grad.flat() * z;
  });
}

// ---- broadcasting (rank-4, each guidance dim matches or equals 1) ----

template <class S, bool IsMul>
Var<S> broadcast_binary(const Var<S>& x, const Var<S>& m) {
  detail::check_broadcastable(x.shape(), m.shape(), IsMul ? "broadcast_mul" : "broadcast_add");
  Shape xs = detail::pad4(x.shape());
  Index st[4];
  detail::bcast_strides(m.shape(), st);
  Tensor<S> y(x.shape());
  const S* xv = x.value().data();
  const S* mv = m.value().data();
  S* yv = y.data();
  Index n = 0;
  for (Index b = 0; b < xs[0]; ++b)
    for (Index c = 0; c < xs[1]; ++c)
      for (Index h = 0; h < xs[2]; ++h) {
        Index base = b * st[0] + c * st[1] + h * st[2];
        for (Index w = 0; w < xs[3]; ++w, ++n) {
          S mw = mv[base + w * st[3]];
          yv[n] = IsMul ? xv[n] * mw : xv[n] + mw;
        }
      }
  return Var<S>::make(std::move(y), {x, m}, [xs](Node<S>& out) {
    auto& px = *out.parents[0];
    auto& pm = *out.parents[1];
    Index st[4];
    detail::bcast_strides(pm.value.shape(), st);
    const S* g = out.grad.data();
    Index n = 0;
    if constexpr (IsMul) {
      const S* xv = px.value.data();
      const S* mv = pm.value.data();
      S* gx = px.requires_grad ? px.grad.data() : nullptr;
      S* gm = pm.requires_grad ? pm.grad.data() : nullptr;
      for (Index b = 0; b < xs[0]; ++b)
        for (Index c = 0; c < xs[1]; ++c)
          for (Index h = 0; h < xs[2]; ++h) {
            Index base = b * st[0] + c * st[1] + h * st[2];
            for (Index w = 0; w < xs[3]; ++w, ++n) {
              Index mi = base + w * st[3];
              if (gx) gx[n] += g[n] * mv[mi];
              if (gm) gm[mi] += g[n] * xv[n];
            }
          }
    } else {
      if (px.requires_grad) px.grad.flat() += out.grad.flat();
      if (pm.requires_grad) {
        S* gm = pm.grad.data();
        for (Index b = 0; b < xs[0]; ++b)
          for (Index c = 0; c < xs[1]; ++c)
            for (Index h = 0; h < xs[2]; ++h) {
              Index base = b * st[0] + c * st[1] + h * st[2];
              for (Index w = 0; w < xs[3]; ++w, ++n) gm[base + w * st[3]] += g[n];
            }
      }
    }
  });
}

template <class S>
Var<S> broadcast_mul(const Var<S>& x, const Var<S>& m) {
  return broadcast_binary<S, true>(x, m);
}

template <class S>
Var<S> broadcast_add(const Var<S>& x, const Var<S>& m) {
  return broadcast_binary<S, false>(x, m);
}

// ---- reductions ----

template <class S>
Var<S> sum_all(const Var<S>& a) {
  Tensor<S> y = Tensor<S>::scalar(a.value().flat().sum());
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (p.requires_grad) p.grad.flat() += out.grad[0];
  });
}

template <class S>
Var<S> mean_all(const Var<S>& a) {
  return sum_all(a) * (S(1) / S(a.numel()));
}

// spatial sum: [B,C,H,W] -> [B,C,1,1]
template <class S>
Var<S> sum_hw(const Var<S>& a) {
  Index B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<S> y(Shape{B, C, 1, 1});
  for (Index i = 0; i < B * C; ++i)
    y[i] = a.value().mat_at(i * HW, 1, HW).sum();
  return Var<S>::make(std::move(y), {a}, [B, C, HW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index i = 0; i < B * C; ++i)
      p.grad.mat_at(i * HW, 1, HW).array() += out.grad[i];
  });
}

// per-sample sum: [B,C,H,W] -> [B,1,1,1]
template <class S>
Var<S> sum_chw(const Var<S>& a) {
  Index B = a.dim(0), CHW = a.numel() / a.dim(0);
  Tensor<S> y(Shape{B, 1, 1, 1});
  for (Index b = 0; b < B; ++b)
    y[b] = a.value().mat_at(b * CHW, 1, CHW).sum();
  return Var<S>::make(std::move(y), {a}, [B, CHW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      p.grad.mat_at(b * CHW, 1, CHW).array() += out.grad[b];
  });
}

// ---- channel concat / views ----

template <class S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  Index B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  Index Ctot = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != B || x.dim(2) != H || x.dim(3) != W)
      throw ShapeError("concat: incompatible shapes " + shape_str(xs[0].shape()) + " vs " +
                       shape_str(x.shape()));
    Ctot += x.dim(1);
  }
  Tensor<S> y(Shape{B, Ctot, H, W});
  Index HW = H * W;
  for (Index b = 0; b < B; ++b) {
    Index co = 0;
    for (const auto& x : xs) {
      Index C = x.dim(1);
      std::copy(x.value().data() + b * C * HW, x.value().data() + (b + 1) * C * HW,
                y.data() + (b * Ctot + co) * HW);
      co += C;
    }
  }
  return Var<S>::make(std::move(y), xs, [B, HW, Ctot](Node<S>& out) {
    Index co = 0;
    for (auto& pp : out.parents) {
      auto& p = *pp;
      Index C = p.value.dim(1);
      if (p.requires_grad) {
        for (Index b = 0; b < B; ++b) {
          auto src = out.grad.mat_at((b * Ctot + co) * HW, 1, C * HW);
          p.grad.mat_at(b * C * HW, 1, C * HW) += src;
        }
      }
      co += C;
    }
  });
}

template <class S>
Var<S> reshape(const Var<S>& a, Shape s) {
  Tensor<S> y = a.value().reshaped(s);
  return Var<S>::make(std::move(y), {a}, [](Node<S>& out) {
    auto& p = *out.parents[0];
    if (p.requires_grad) p.grad.flat() += out.grad.flat();
  });
}

}  // namespace lgsan
