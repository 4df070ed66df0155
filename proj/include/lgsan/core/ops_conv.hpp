#pragma once

#include "lgsan/core/ops.hpp"

namespace lgsan {

namespace detail {

template <class S>
void im2col(const Tensor<S>& x, Index b, int k, int stride, int pad, Tensor<S>& col) {
  Index C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Index oh = (H + 2 * pad - k) / stride + 1;
  Index ow = (W + 2 * pad - k) / stride + 1;
  S* cd = col.data();
  const S* xd = x.data() + b * C * H * W;
  for (Index c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        S* row = cd + ((c * k + ki) * k + kj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          Index h = i * stride + ki - pad;
          if (h < 0 || h >= H) {
            std::fill(row + i * ow, row + (i + 1) * ow, S(0));
            continue;
          }
          const S* src = xd + (c * H + h) * W;
          for (Index j = 0; j < ow; ++j) {
            Index w = j * stride + kj - pad;
            row[i * ow + j] = (w >= 0 && w < W) ? src[w] : S(0);
          }
        }
      }
}

template <class S>
void col2im_add(const Tensor<S>& col, Index b, int k, int stride, int pad, Tensor<S>& dx) {
  Index C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  Index oh = (H + 2 * pad - k) / stride + 1;
  Index ow = (W + 2 * pad - k) / stride + 1;
  const S* cd = col.data();
  S* xd = dx.data() + b * C * H * W;
  for (Index c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const S* row = cd + ((c * k + ki) * k + kj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          Index h = i * stride + ki - pad;
          if (h < 0 || h >= H) continue;
          S* dst = xd + (c * H + h) * W;
          for (Index j = 0; j < ow; ++j) {
            Index w = j * stride + kj - pad;
            if (w >= 0 && w < W) dst[w] += row[i * ow + j];
          }
        }
      }
}

}  // namespace detail

// conv2d via im2col + GEMM. weight [Cout,Cin,k,k], bias [Cout] or empty.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad) {
  Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  Index Cout = weight.dim(0);
  int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != Cin)
    throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  Index oh = (H + 2 * pad - k) / stride + 1;
  Index ow = (W + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                     " too small for kernel " + std::to_string(k));

  Tensor<S> y(Shape{B, Cout, oh, ow});
  Tensor<S> col(Shape{Cin * k * k, oh * ow});
  auto wmat = weight.value().mat(Cout, Cin * k * k);
  const bool has_bias = bias.defined() && bias.numel() > 0;
  for (Index b = 0; b < B; ++b) {
    detail::im2col(x.value(), b, k, stride, pad, col);
    auto ymat = y.mat_at(b * Cout * oh * ow, Cout, oh * ow);
    ymat.noalias() = wmat * col.mat(Cin * k * k, oh * ow);
    if (has_bias)
      for (Index c = 0; c < Cout; ++c)
        ymat.row(c).array() += bias.value()[c];
  }

  std::vector<Var<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<S>::make(std::move(y), std::move(parents),
                      [stride, pad, k, has_bias](Node<S>& out) {
    auto& px = *out.parents[0];
    auto& pw = *out.parents[1];
    Index B = px.value.dim(0), Cin = px.value.dim(1);
    Index Cout = pw.value.dim(0);
    Index oh = out.value.dim(2), ow = out.value.dim(3);
    Tensor<S> col(Shape{Cin * k * k, oh * ow});
    Tensor<S> dcol(Shape{Cin * k * k, oh * ow});
    auto wmat = pw.value.mat(Cout, Cin * k * k);
    for (Index b = 0; b < B; ++b) {
      auto g = out.grad.mat_at(b * Cout * oh * ow, Cout, oh * ow);
      if (pw.requires_grad) {
        detail::im2col(px.value, b, k, stride, pad, col);
        pw.grad.mat(Cout, Cin * k * k).noalias() += g * col.mat(Cin * k * k, oh * ow).transpose();
      }
      if (px.requires_grad) {
        dcol.mat(Cin * k * k, oh * ow).noalias() = wmat.transpose() * g;
        detail::col2im_add(dcol, b, k, stride, pad, px.grad);
      }
    }
    if (has_bias) {
      auto& pb = *out.parents[2];
      if (pb.requires_grad)
        for (Index b = 0; b < B; ++b) {
          auto g = out.grad.mat_at(b * Cout * oh * ow, Cout, oh * ow);
          for (Index c = 0; c < Cout; ++c) pb.grad[c] += g.row(c).sum();
        }
    }
  });
}

enum class PadMode { Zero, Reflect };

namespace detail {

inline Index reflect_index(Index i, Index n) {
  // mirror without repeating the edge sample: -1 -> 1, n -> n-2
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// 1-D stride-1 averaging pass along the last axis of a [rows, n] view.
// Zero mode keeps the k divisor over out-of-range taps (count-include-pad).
template <class S>
void avg_pass(const S* src, S* dst, Index rows, Index n, int k, PadMode mode, bool adjoint) {
  int r = k / 2;
  S inv = S(1) / S(k);
  for (Index row = 0; row < rows; ++row) {
    const S* s = src + row * n;
    S* d = dst + row * n;
    for (Index i = 0; i < n; ++i) {
      if (!adjoint) {
        S acc = S(0);
        for (int t = -r; t <= r; ++t) {
          Index j = i + t;
          if (mode == PadMode::Reflect) {
            acc += s[reflect_index(j, n)];
          } else if (j >= 0 && j < n) {
            acc += s[j];
          }
        }
        d[i] += acc * inv;
      } else {
        S g = s[i] * inv;
        for (int t = -r; t <= r; ++t) {
          Index j = i + t;
          if (mode == PadMode::Reflect) {
            d[reflect_index(j, n)] += g;
          } else if (j >= 0 && j < n) {
            d[j] += g;
          }
        }
      }
    }
  }
}

// full separable pass over BCHW: along W then along H
template <class S>
void avg_pool_tensor(const Tensor<S>& x, Tensor<S>& y, int k, PadMode mode, bool adjoint) {
  Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> tmp(x.shape());
  // pass along W
  avg_pass(x.data(), tmp.data(), B * C * H, W, k, mode, adjoint);
  // pass along H: process columns via transpose trick per (b,c) plane
  Tensor<S> plane_t(Shape{W, H}), out_t(Shape{W, H});
  for (Index bc = 0; bc < B * C; ++bc) {
    auto src = tmp.mat_at(bc * H * W, H, W);
    plane_t.mat(W, H) = src.transpose();
    out_t.set_zero();
    avg_pass(plane_t.data(), out_t.data(), W, H, k, mode, adjoint);
    y.mat_at(bc * H * W, H, W) += out_t.mat(W, H).transpose();
  }
}

}  // namespace detail

// stride-1 k x k average pooling, output size == input size.
template <class S>
Var<S> avg_pool_same(const Var<S>& x, int k, PadMode mode = PadMode::Zero) {
  Index H = x.dim(2), W = x.dim(3);
  if (mode == PadMode::Reflect && (H < k / 2 + 1 || W < k / 2 + 1))
    throw ShapeError("avg_pool_same: spatial " + std::to_string(H) + "x" + std::to_string(W) +
                     " too small for reflect pad of kernel " + std::to_string(k));
  Tensor<S> y(x.shape());
  detail::avg_pool_tensor(x.value(), y, k, mode, false);
  return Var<S>::make(std::move(y), {x}, [k, mode](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    detail::avg_pool_tensor(out.grad, p.grad, k, mode, true);
  });
}

// global pools: [B,C,H,W] -> [B,C,1,1]
template <class S>
Var<S> global_avg_pool(const Var<S>& x) {
  return sum_hw(x) * (S(1) / S(x.dim(2) * x.dim(3)));
}

template <class S>
Var<S> global_max_pool(const Var<S>& x) {
  Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{B, C, 1, 1});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<size_t>(B * C));
  for (Index i = 0; i < B * C; ++i) {
    const S* s = x.value().data() + i * HW;
    Index best = 0;
    for (Index j = 1; j < HW; ++j)
      if (s[j] > s[best]) best = j;
    (*argmax)[static_cast<size_t>(i)] = best;
    y[i] = s[best];
  }
  return Var<S>::make(std::move(y), {x}, [argmax, HW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index i = 0; i < out.value.numel(); ++i)
      p.grad[i * HW + (*argmax)[static_cast<size_t>(i)]] += out.grad[i];
  });
}

// channel statistics: [B,C,H,W] -> [B,1,H,W]
template <class S>
Var<S> channel_mean(const Var<S>& x) {
  Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{B, 1, x.dim(2), x.dim(3)});
  S inv = S(1) / S(C);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      auto src = x.value().mat_at((b * C + c) * HW, 1, HW);
      y.mat_at(b * HW, 1, HW) += src * inv;
    }
  return Var<S>::make(std::move(y), {x}, [B, C, HW, inv](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        p.grad.mat_at((b * C + c) * HW, 1, HW) += out.grad.mat_at(b * HW, 1, HW) * inv;
  });
}

template <class S>
Var<S> channel_max(const Var<S>& x) {
  Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{B, 1, x.dim(2), x.dim(3)});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<size_t>(B * HW));
  for (Index b = 0; b < B; ++b)
    for (Index j = 0; j < HW; ++j) {
      const S* s = x.value().data() + b * C * HW;
      Index best = 0;
      for (Index c = 1; c < C; ++c)
        if (s[c * HW + j] > s[best * HW + j]) best = c;
      (*argmax)[static_cast<size_t>(b * HW + j)] = best;
      y[b * HW + j] = s[best * HW + j];
    }
  return Var<S>::make(std::move(y), {x}, [argmax, B, C, HW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      for (Index j = 0; j < HW; ++j)
        p.grad[(b * C + (*argmax)[static_cast<size_t>(b * HW + j)]) * HW + j] +=
            out.grad[b * HW + j];
  });
}

}  // namespace lgsan
