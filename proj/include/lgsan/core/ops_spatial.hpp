#pragma once

#include "lgsan/core/ops.hpp"

namespace lgsan {

namespace detail {

struct LerpAxis {
  std::vector<Index> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

// half-pixel-center mapping; exact identity when n_out == n_in
inline LerpAxis lerp_axis(Index n_in, Index n_out) {
  LerpAxis ax;
  ax.i0.resize(static_cast<size_t>(n_out));
  ax.i1.resize(static_cast<size_t>(n_out));
  ax.w1.resize(static_cast<size_t>(n_out));
  double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (Index o = 0; o < n_out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > static_cast<double>(n_in - 1)) src = static_cast<double>(n_in - 1);
    Index i0 = static_cast<Index>(std::floor(src));
    Index i1 = std::min(i0 + 1, n_in - 1);
    ax.i0[static_cast<size_t>(o)] = i0;
    ax.i1[static_cast<size_t>(o)] = i1;
    ax.w1[static_cast<size_t>(o)] = src - static_cast<double>(i0);
  }
  return ax;
}

}  // namespace detail

template <class S>
Var<S> resize_bilinear(const Var<S>& x, Index Ho, Index Wo) {
  Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (Ho < 1 || Wo < 1) throw ShapeError("resize_bilinear: target size must be positive");
  if (Ho == H && Wo == W) {
    // keep the node so gradients still flow
    Tensor<S> y = x.value();
    return Var<S>::make(std::move(y), {x}, [](Node<S>& out) {
      auto& p = *out.parents[0];
      if (p.requires_grad) p.grad.flat() += out.grad.flat();
    });
  }
  auto ah = std::make_shared<detail::LerpAxis>(detail::lerp_axis(H, Ho));
  auto aw = std::make_shared<detail::LerpAxis>(detail::lerp_axis(W, Wo));
  Tensor<S> y(Shape{B, C, Ho, Wo});
  for (Index bc = 0; bc < B * C; ++bc) {
    const S* src = x.value().data() + bc * H * W;
    S* dst = y.data() + bc * Ho * Wo;
    for (Index i = 0; i < Ho; ++i) {
      Index h0 = ah->i0[static_cast<size_t>(i)], h1 = ah->i1[static_cast<size_t>(i)];
      S fh = static_cast<S>(ah->w1[static_cast<size_t>(i)]);
      for (Index j = 0; j < Wo; ++j) {
        Index w0 = aw->i0[static_cast<size_t>(j)], w1 = aw->i1[static_cast<size_t>(j)];
        S fw = static_cast<S>(aw->w1[static_cast<size_t>(j)]);
        S top = src[h0 * W + w0] * (S(1) - fw) + src[h0 * W + w1] * fw;
        S bot = src[h1 * W + w0] * (S(1) - fw) + src[h1 * W + w1] * fw;
        dst[i * Wo + j] = top * (S(1) - fh) + bot * fh;
      }
    }
  }
  return Var<S>::make(std::move(y), {x}, [ah, aw, H, W, Ho, Wo](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    Index BC = p.value.dim(0) * p.value.dim(1);
    for (Index bc = 0; bc < BC; ++bc) {
      S* dsrc = p.grad.data() + bc * H * W;
      const S* g = out.grad.data() + bc * Ho * Wo;
      for (Index i = 0; i < Ho; ++i) {
        Index h0 = ah->i0[static_cast<size_t>(i)], h1 = ah->i1[static_cast<size_t>(i)];
        S fh = static_cast<S>(ah->w1[static_cast<size_t>(i)]);
        for (Index j = 0; j < Wo; ++j) {
          Index w0 = aw->i0[static_cast<size_t>(j)], w1 = aw->i1[static_cast<size_t>(j)];
          S fw = static_cast<S>(aw->w1[static_cast<size_t>(j)]);
          S gv = g[i * Wo + j];
          dsrc[h0 * W + w0] += gv * (S(1) - fh) * (S(1) - fw);
          dsrc[h0 * W + w1] += gv * (S(1) - fh) * fw;
          dsrc[h1 * W + w0] += gv * fh * (S(1) - fw);
          dsrc[h1 * W + w1] += gv * fh * fw;
        }
      }
    }
  });
}

// resize to another feature map's spatial size
template <class S>
Var<S> resize_like(const Var<S>& x, const Var<S>& ref) {
  return resize_bilinear(x, ref.dim(2), ref.dim(3));
}

// zero padding (top, bottom, left, right)
template <class S>
Var<S> pad_spatial(const Var<S>& x, Index t, Index b, Index l, Index r) {
  Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Index Ho = H + t + b, Wo = W + l + r;
  Tensor<S> y(Shape{B, C, Ho, Wo});
  for (Index bc = 0; bc < B * C; ++bc)
    for (Index i = 0; i < H; ++i)
      std::copy(x.value().data() + (bc * H + i) * W, x.value().data() + (bc * H + i + 1) * W,
                y.data() + (bc * Ho + i + t) * Wo + l);
  return Var<S>::make(std::move(y), {x}, [t, l, H, W, Ho, Wo](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    Index BC = p.value.dim(0) * p.value.dim(1);
    for (Index bc = 0; bc < BC; ++bc)
      for (Index i = 0; i < H; ++i) {
        const S* g = out.grad.data() + (bc * Ho + i + t) * Wo + l;
        S* d = p.grad.data() + (bc * H + i) * W;
        for (Index j = 0; j < W; ++j) d[j] += g[j];
      }
  });
}

template <class S>
Var<S> crop_spatial(const Var<S>& x, Index top, Index left, Index Ho, Index Wo) {
  Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (top + Ho > H || left + Wo > W)
    throw ShapeError("crop: window exceeds input " + shape_str(x.shape()));
  Tensor<S> y(Shape{B, C, Ho, Wo});
  for (Index bc = 0; bc < B * C; ++bc)
    for (Index i = 0; i < Ho; ++i)
      std::copy(x.value().data() + (bc * H + top + i) * W + left,
                x.value().data() + (bc * H + top + i) * W + left + Wo,
                y.data() + (bc * Ho + i) * Wo);
  return Var<S>::make(std::move(y), {x}, [top, left, H, W, Ho, Wo](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    Index BC = p.value.dim(0) * p.value.dim(1);
    for (Index bc = 0; bc < BC; ++bc)
      for (Index i = 0; i < Ho; ++i) {
        const S* g = out.grad.data() + (bc * Ho + i) * Wo;
        S* d = p.grad.data() + (bc * H + top + i) * W + left;
        for (Index j = 0; j < Wo; ++j) d[j] += g[j];
      }
  });
}

// place a tile into a zero canvas at (top, left); adjoint of crop
template <class S>
Var<S> place_spatial(const Var<S>& x, Index top, Index left, Index Ho, Index Wo) {
  Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (top + H > Ho || left + W > Wo)
    throw ShapeError("place: tile exceeds canvas");
  Tensor<S> y(Shape{B, C, Ho, Wo});
  for (Index bc = 0; bc < B * C; ++bc)
    for (Index i = 0; i < H; ++i)
      std::copy(x.value().data() + (bc * H + i) * W, x.value().data() + (bc * H + i + 1) * W,
                y.data() + (bc * Ho + top + i) * Wo + left);
  return Var<S>::make(std::move(y), {x}, [top, left, H, W, Ho, Wo](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    Index BC = p.value.dim(0) * p.value.dim(1);
    for (Index bc = 0; bc < BC; ++bc)
      for (Index i = 0; i < H; ++i) {
        const S* g = out.grad.data() + (bc * Ho + top + i) * Wo + left;
        S* d = p.grad.data() + (bc * H + i) * W;
        for (Index j = 0; j < W; ++j) d[j] += g[j];
      }
  });
}

}  // namespace lgsan
