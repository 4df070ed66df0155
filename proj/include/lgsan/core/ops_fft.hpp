#pragma once

#include <complex>

#include "lgsan/core/ops.hpp"

namespace lgsan {

namespace detail {

template <class S>
using CMat = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
CMat<S> dft_matrix(Index n, bool inverse) {
  CMat<S> f(n, n);
  const double sign = inverse ? 1.0 : -1.0;
  for (Index k = 0; k < n; ++k)
    for (Index j = 0; j < n; ++j) {
      double a = sign * 2.0 * EIGEN_PI * static_cast<double>(k) * static_cast<double>(j) /
                 static_cast<double>(n);
      f(k, j) = std::complex<S>(static_cast<S>(std::cos(a)), static_cast<S>(std::sin(a)));
    }
  return f;
}

// signed frequency of DFT bin k out of n
inline double signed_freq(Index k, Index n) {
  return (k <= n / 2) ? static_cast<double>(k) : static_cast<double>(k - n);
}

// 1 = keep bin, 0 = zero it. Radial ideal filter on centered frequencies.
inline Eigen::MatrixXd highpass_mask(Index h, Index w, double cutoff_ratio) {
  double radius = cutoff_ratio * (static_cast<double>(std::min(h, w)) / 2.0);
  Eigen::MatrixXd m(h, w);
  for (Index u = 0; u < h; ++u)
    for (Index v = 0; v < w; ++v) {
      double d = std::hypot(signed_freq(u, h), signed_freq(v, w));
      m(u, v) = (d <= radius) ? 0.0 : 1.0;
    }
  return m;
}

// real linear operator: x -> Re(IDFT(mask .* DFT(x))). The mask is symmetric
// under frequency negation, so the result of a real input is real and the
// operator is self-adjoint; backward reuses the same filter.
template <class S>
void apply_highpass_plane(const S* src, S* dst, Index h, Index w, const CMat<S>& fh,
                          const CMat<S>& fw, const Eigen::MatrixXd& mask) {
  CMat<S> x(h, w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) x(i, j) = std::complex<S>(src[i * w + j], S(0));
  CMat<S> spec = fh * x * fw.transpose();
  for (Index u = 0; u < h; ++u)
    for (Index v = 0; v < w; ++v)
      if (mask(u, v) == 0.0) spec(u, v) = std::complex<S>(S(0), S(0));
  CMat<S> back = fh.adjoint() * spec * fw.conjugate();
  S norm = S(1) / static_cast<S>(h * w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) dst[i * w + j] = back(i, j).real() * norm;
}

}  // namespace detail

// per-channel 2-D ideal high-pass, pre-activation (no ReLU here)
template <class S>
Var<S> fft_highpass_linear(const Var<S>& x, double cutoff_ratio) {
  if (!(cutoff_ratio > 0.0 && cutoff_ratio < 1.0))
    throw ConfigError("fft_highpass: cutoff_ratio must lie in (0,1), got " +
                      std::to_string(cutoff_ratio));
  Index H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) throw ShapeError("fft_highpass: spatial dims must be >= 2");
  auto fh = std::make_shared<detail::CMat<S>>(detail::dft_matrix<S>(H, false));
  auto fw = std::make_shared<detail::CMat<S>>(detail::dft_matrix<S>(W, false));
  auto mask = std::make_shared<Eigen::MatrixXd>(detail::highpass_mask(H, W, cutoff_ratio));
  Index BC = x.dim(0) * x.dim(1);
  Tensor<S> y(x.shape());
  for (Index bc = 0; bc < BC; ++bc)
    detail::apply_highpass_plane(x.value().data() + bc * H * W, y.data() + bc * H * W, H, W, *fh,
                                 *fw, *mask);
  return Var<S>::make(std::move(y), {x}, [fh, fw, mask, H, W, BC](Node<S>& out) {
    auto& p = *out.parents[0];
    if (!p.requires_grad) return;
    Tensor<S> tmp(Shape{H, W});
    for (Index bc = 0; bc < BC; ++bc) {
      detail::apply_highpass_plane(out.grad.data() + bc * H * W, tmp.data(), H, W, *fh, *fw, *mask);
      p.grad.mat_at(bc * H * W, 1, H * W) += tmp.mat(1, H * W);
    }
  });
}

// Eq.-(8)-style operator: ReLU of the high-pass response
template <class S>
Var<S> fft_highpass(const Var<S>& x, double cutoff_ratio) {
  return relu(fft_highpass_linear(x, cutoff_ratio));
}

}  // namespace lgsan
