#pragma once

#include "lgsan/core/ops.hpp"

namespace lgsan {

// [B,C,H,W] -> [B, HW, C]
template <class S>
Var<S> to_tokens(const Var<S>& x) {
  Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{B, HW, C});
  for (Index b = 0; b < B; ++b)
    y.mat_at(b * HW * C, HW, C) = x.value().mat_at(b * C * HW, C, HW).transpose();
  return Var<S>::make(std::move(y), {x}, [B, C, HW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      p.grad.mat_at(b * C * HW, C, HW) += out.grad.mat_at(b * HW * C, HW, C).transpose();
  });
}

// [B, HW, C] -> [B,C,H,W]
template <class S>
Var<S> from_tokens(const Var<S>& x, Index H, Index W) {
  Index B = x.dim(0), HW = x.dim(1), C = x.dim(2);
  if (HW != H * W) throw ShapeError("from_tokens: token count != H*W");
  Tensor<S> y(Shape{B, C, H, W});
  for (Index b = 0; b < B; ++b)
    y.mat_at(b * C * HW, C, HW) = x.value().mat_at(b * HW * C, HW, C).transpose();
  return Var<S>::make(std::move(y), {x}, [B, C, HW](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      p.grad.mat_at(b * HW * C, HW, C) += out.grad.mat_at(b * C * HW, C, HW).transpose();
  });
}

// [B,M,N] -> [B,N,M]
template <class S>
Var<S> transpose12(const Var<S>& x) {
  Index B = x.dim(0), M = x.dim(1), N = x.dim(2);
  Tensor<S> y(Shape{B, N, M});
  for (Index b = 0; b < B; ++b)
    y.mat_at(b * N * M, N, M) = x.value().mat_at(b * M * N, M, N).transpose();
  return Var<S>::make(std::move(y), {x}, [B, M, N](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index b = 0; b < B; ++b)
      p.grad.mat_at(b * M * N, M, N) += out.grad.mat_at(b * N * M, N, M).transpose();
  });
}

// batched matmul [B,M,K] x [B,K,N] -> [B,M,N]
template <class S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
  Index B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  if (b.dim(0) != B || b.dim(1) != K)
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<S> y(Shape{B, M, N});
  for (Index i = 0; i < B; ++i)
    y.mat_at(i * M * N, M, N).noalias() =
        a.value().mat_at(i * M * K, M, K) * b.value().mat_at(i * K * N, K, N);
  return Var<S>::make(std::move(y), {a, b}, [B, M, K, N](Node<S>& out) {
    auto& pa = *out.parents[0];
    auto& pb = *out.parents[1];
    for (Index i = 0; i < B; ++i) {
      auto g = out.grad.mat_at(i * M * N, M, N);
      if (pa.requires_grad)
        pa.grad.mat_at(i * M * K, M, K).noalias() +=
            g * pb.value.mat_at(i * K * N, K, N).transpose();
      if (pb.requires_grad)
        pb.grad.mat_at(i * K * N, K, N).noalias() +=
            pa.value.mat_at(i * M * K, M, K).transpose() * g;
    }
  });
}

// softmax over the last axis of [B,M,N]
template <class S>
Var<S> softmax_lastdim(const Var<S>& x) {
  Index rows = x.numel() / x.dim(x.rank() - 1);
  Index N = x.dim(x.rank() - 1);
  Tensor<S> y(x.shape());
  for (Index r = 0; r < rows; ++r) {
    const S* s = x.value().data() + r * N;
    S* d = y.data() + r * N;
    S mx = s[0];
    for (Index j = 1; j < N; ++j) mx = std::max(mx, s[j]);
    S sum = S(0);
    for (Index j = 0; j < N; ++j) {
      d[j] = std::exp(s[j] - mx);
      sum += d[j];
    }
    S inv = S(1) / sum;
    for (Index j = 0; j < N; ++j) d[j] *= inv;
  }
  return Var<S>::make(std::move(y), {x}, [rows, N](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index r = 0; r < rows; ++r) {
      const S* yv = out.value.data() + r * N;
      const S* g = out.grad.data() + r * N;
      S* d = p.grad.data() + r * N;
      S dot = S(0);
      for (Index j = 0; j < N; ++j) dot += g[j] * yv[j];
      for (Index j = 0; j < N; ++j) d[j] += (g[j] - dot) * yv[j];
    }
  });
}

// per-row L2 normalization over the last axis
template <class S>
Var<S> l2_normalize_lastdim(const Var<S>& x, S eps = S(1e-12)) {
  Index N = x.dim(x.rank() - 1);
  Index rows = x.numel() / N;
  Tensor<S> y(x.shape());
  auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    auto row = x.value().mat_at(r * N, 1, N);
    S n = row.norm();
    (*norms)[static_cast<size_t>(r)] = n;
    y.mat_at(r * N, 1, N) = row / std::max(n, eps);
  }
  return Var<S>::make(std::move(y), {x}, [norms, rows, N, eps](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index r = 0; r < rows; ++r) {
      S n = (*norms)[static_cast<size_t>(r)];
      auto g = out.grad.mat_at(r * N, 1, N);
      auto yv = out.value.mat_at(r * N, 1, N);
      if (n > eps) {
        S dot = (g.array() * yv.array()).sum();
        p.grad.mat_at(r * N, 1, N).array() += (g.array() - dot * yv.array()) / n;
      } else {
        p.grad.mat_at(r * N, 1, N).array() += g.array() / eps;
      }
    }
  });
}

// layer norm over the last axis, learnable per-channel affine
template <class S>
Var<S> layer_norm_lastdim(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                          S eps = S(1e-5)) {
  Index N = x.dim(x.rank() - 1);
  Index rows = x.numel() / N;
  if (gamma.numel() != N || beta.numel() != N) throw ShapeError("layer_norm: affine size mismatch");
  Tensor<S> y(x.shape());
  auto stats = std::make_shared<std::vector<S>>(static_cast<size_t>(2 * rows));
  for (Index r = 0; r < rows; ++r) {
    auto row = x.value().mat_at(r * N, 1, N).array();
    S mu = row.mean();
    S var = (row - mu).square().mean();
    S inv_std = S(1) / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(2 * r)] = mu;
    (*stats)[static_cast<size_t>(2 * r + 1)] = inv_std;
    y.mat_at(r * N, 1, N).array() =
        (row - mu) * inv_std * gamma.value().flat().transpose() + beta.value().flat().transpose();
  }
  return Var<S>::make(std::move(y), {x, gamma, beta}, [stats, rows, N](Node<S>& out) {
    auto& px = *out.parents[0];
    auto& pg = *out.parents[1];
    auto& pb = *out.parents[2];
    for (Index r = 0; r < rows; ++r) {
      S mu = (*stats)[static_cast<size_t>(2 * r)];
      S inv_std = (*stats)[static_cast<size_t>(2 * r + 1)];
      auto xr = px.value.mat_at(r * N, 1, N).array();
      auto g = out.grad.mat_at(r * N, 1, N).array();
      Eigen::Array<S, 1, Eigen::Dynamic> xhat = (xr - mu) * inv_std;
      Eigen::Array<S, 1, Eigen::Dynamic> gxhat = g * pg.value.flat().transpose();
      if (pg.requires_grad) pg.grad.flat().transpose() += (g * xhat).matrix().array();
      if (pb.requires_grad) pb.grad.flat().transpose() += g.matrix().array();
      if (px.requires_grad) {
        S m1 = gxhat.mean();
        S m2 = (gxhat * xhat).mean();
        px.grad.mat_at(r * N, 1, N).array() += inv_std * (gxhat - m1 - xhat * m2);
      }
    }
  });
}

// contiguous slice along the last axis
template <class S>
Var<S> slice_lastdim(const Var<S>& x, Index from, Index len) {
  Index N = x.dim(x.rank() - 1);
  Index rows = x.numel() / N;
  if (from < 0 || from + len > N) throw ShapeError("slice_lastdim: out of range");
  Shape yshape = x.shape();
  yshape.back() = len;
  Tensor<S> y(yshape);
  for (Index r = 0; r < rows; ++r)
    std::copy(x.value().data() + r * N + from, x.value().data() + r * N + from + len,
              y.data() + r * len);
  return Var<S>::make(std::move(y), {x}, [rows, N, from, len](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    for (Index r = 0; r < rows; ++r) {
      const S* g = out.grad.data() + r * len;
      S* d = p.grad.data() + r * N + from;
      for (Index j = 0; j < len; ++j) d[j] += g[j];
    }
  });
}

// dense layer on the last axis: y = x W^T + b, W [Dout, D]
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  Index D = x.dim(x.rank() - 1);
  Index R = x.numel() / D;
  Index Dout = weight.dim(0);
  if (weight.dim(1) != D) throw ShapeError("linear: weight expects input dim " +
                                           std::to_string(weight.dim(1)));
  Shape yshape = x.shape();
  yshape.back() = Dout;
  Tensor<S> y(yshape);
  y.mat(R, Dout).noalias() = x.value().mat(R, D) * weight.value().mat(Dout, D).transpose();
  const bool has_bias = bias.defined() && bias.numel() > 0;
  if (has_bias)
    y.mat(R, Dout).rowwise() += bias.value().mat(1, Dout).row(0);
  std::vector<Var<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<S>::make(std::move(y), std::move(parents), [R, D, Dout, has_bias](Node<S>& out) {
    auto& px = *out.parents[0];
    auto& pw = *out.parents[1];
    auto g = out.grad.mat(R, Dout);
    if (px.requires_grad)
      px.grad.mat(R, D).noalias() += g * pw.value.mat(Dout, D);
    if (pw.requires_grad)
      pw.grad.mat(Dout, D).noalias() += g.transpose() * px.value.mat(R, D);
    if (has_bias) {
      auto& pb = *out.parents[2];
      if (pb.requires_grad) pb.grad.mat(1, Dout) += g.colwise().sum();
    }
  });
}

}  // namespace lgsan
