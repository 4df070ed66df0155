#pragma once

// Evaluation metrics for soft foreground maps against binary ground truth.
// Definitions follow the original S-measure / E-measure / weighted-F papers
// with two pinned conventions so that a perfect prediction scores exactly
// (S,E,Fw,M) = (1,1,1,0):
//   - E-measure averages over the 256 bin-midpoint thresholds (k+0.5)/256
//     and normalizes by H*W;
//   - epsilon guards are replaced by explicit zero-denominator branches
//     wherever the denominator is provably positive otherwise.
// Distance-transform ties resolve to the smallest row-major index.

#include <algorithm>
#include <string>
#include <vector>

#include "lgsan/core/tensor.hpp"

namespace lgsan::metrics {

using Map = Tensor<double>;  // [H, W]

inline void validate_pair(const Map& pred, const Map& gt, const char* what) {
  if (pred.shape() != gt.shape())
    throw ShapeError(std::string(what) + ": prediction " + shape_str(pred.shape()) +
                     " vs ground truth " + shape_str(gt.shape()));
  for (Index i = 0; i < pred.numel(); ++i) {
    if (pred[i] < 0.0 || pred[i] > 1.0)
      throw ValidationError(std::string(what) + ": prediction outside [0,1]");
    if (gt[i] != 0.0 && gt[i] != 1.0)
      throw ValidationError(std::string(what) + ": ground truth must be binary");
  }
}

inline double mae(const Map& pred, const Map& gt) {
  validate_pair(pred, gt, "mae");
  double s = 0;
  for (Index i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.numel());
}

// ---- S-measure ----

namespace detail {

inline double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  double n = static_cast<double>(vals.size());
  double mean = 0;
  for (double v : vals) mean += v;
  mean /= n;
  double var = 0;
  if (vals.size() > 1) {
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (n - 1.0);
  }
  double sd = std::sqrt(var);
  return 2.0 * mean / (mean * mean + 1.0 + sd);
}

inline double ssim_block(const Map& pred, const Map& gt, Index r0, Index r1, Index c0, Index c1) {
  Index n = (r1 - r0) * (c1 - c0);
  if (n <= 0) return 0.0;
  double x = 0, y = 0;
  for (Index i = r0; i < r1; ++i)
    for (Index j = c0; j < c1; ++j) {
      x += pred.at(0, 0, i, j);
      y += gt.at(0, 0, i, j);
    }
  double dn = static_cast<double>(n);
  x /= dn;
  y /= dn;
  double sx = 0, sy = 0, sxy = 0;
  if (n > 1) {
    for (Index i = r0; i < r1; ++i)
      for (Index j = c0; j < c1; ++j) {
        double dx = pred.at(0, 0, i, j) - x, dy = gt.at(0, 0, i, j) - y;
        sx += dx * dx;
        sy += dy * dy;
        sxy += dx * dy;
      }
    sx /= dn - 1.0;
    sy /= dn - 1.0;
    sxy /= dn - 1.0;
  }
  double alpha = 4.0 * x * y * sxy;
  double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0.0) return alpha / beta;
  if (beta == 0.0) return 1.0;
  return 0.0;
}

}  // namespace detail

inline double s_measure(const Map& pred, const Map& gt, double alpha = 0.5) {
  validate_pair(pred, gt, "s_measure");
  Index H = gt.dim(gt.rank() - 2), W = gt.dim(gt.rank() - 1);
  Map p = pred.reshaped(Shape{1, 1, H, W});
  Map g = gt.reshaped(Shape{1, 1, H, W});
  double area = 0;
  for (Index i = 0; i < g.numel(); ++i) area += g[i];
  double mu = area / static_cast<double>(g.numel());
  double pmean = 0;
  for (Index i = 0; i < p.numel(); ++i) pmean += p[i];
  pmean /= static_cast<double>(p.numel());
  if (mu == 0.0) return 1.0 - pmean;  // empty GT: reward empty predictions
  if (mu == 1.0) return pmean;

  // object term
  std::vector<double> fg, bg;
  for (Index i = 0; i < g.numel(); ++i)
    (g[i] > 0.5 ? fg : bg).push_back(g[i] > 0.5 ? p[i] : 1.0 - p[i]);
  double s_obj = mu * detail::object_score(fg) + (1.0 - mu) * detail::object_score(bg);

  // region term around the GT centroid (1-based split, matching the original)
  double sum_c = 0, sum_r = 0;
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j)
      if (g.at(0, 0, i, j) > 0.5) {
        sum_r += static_cast<double>(i + 1);
        sum_c += static_cast<double>(j + 1);
      }
  Index X = static_cast<Index>(std::lround(sum_c / area));
  Index Y = static_cast<Index>(std::lround(sum_r / area));
  X = std::clamp<Index>(X, 1, W);
  Y = std::clamp<Index>(Y, 1, H);
  double total = static_cast<double>(H * W);
  double w1 = static_cast<double>(X * Y) / total;
  double w2 = static_cast<double>((W - X) * Y) / total;
  double w3 = static_cast<double>(X * (H - Y)) / total;
  double w4 = 1.0 - w1 - w2 - w3;
  double q1 = detail::ssim_block(p, g, 0, Y, 0, X);
  double q2 = detail::ssim_block(p, g, 0, Y, X, W);
  double q3 = detail::ssim_block(p, g, Y, H, 0, X);
  double q4 = detail::ssim_block(p, g, Y, H, X, W);
  double s_reg = w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;

  double s = alpha * s_obj + (1.0 - alpha) * s_reg;
  return std::max(0.0, s);
}

// ---- E-measure ----

namespace detail {

inline double e_measure_binary(const std::vector<double>& fm, const std::vector<double>& g) {
  size_t n = fm.size();
  double sum_g = 0, sum_f = 0;
  for (size_t i = 0; i < n; ++i) {
    sum_g += g[i];
    sum_f += fm[i];
  }
  double dn = static_cast<double>(n);
  if (sum_g == 0.0) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += 1.0 - fm[i];
    return acc / dn;
  }
  if (sum_g == dn) {
    return sum_f / dn;
  }
  double mu_f = sum_f / dn, mu_g = sum_g / dn;
  double acc = 0;
  for (size_t i = 0; i < n; ++i) {
    double af = fm[i] - mu_f, ag = g[i] - mu_g;
    double den = af * af + ag * ag;  // > 0: ag never vanishes for binary g
    double align = 2.0 * af * ag / den;
    double enh = (align + 1.0) * (align + 1.0) / 4.0;
    acc += enh;
  }
  return acc / dn;
}

}  // namespace detail

inline double e_measure(const Map& pred, const Map& gt) {
  validate_pair(pred, gt, "e_measure");
  size_t n = static_cast<size_t>(pred.numel());
  std::vector<double> g(n), fm(n);
  for (size_t i = 0; i < n; ++i) g[i] = gt[static_cast<Index>(i)];
  double acc = 0;
  for (int k = 0; k < 256; ++k) {
    double t = (static_cast<double>(k) + 0.5) / 256.0;
    for (size_t i = 0; i < n; ++i) fm[i] = pred[static_cast<Index>(i)] >= t ? 1.0 : 0.0;
    acc += detail::e_measure_binary(fm, g);
  }
  return acc / 256.0;
}

// ---- weighted F-measure ----

namespace detail {

// exact Euclidean distance transform with nearest-foreground indices.
// Expanding Chebyshev ring search; integer squared distances, ties resolve
// to the smallest row-major index.
inline void distance_transform(const Map& gt, std::vector<double>& dist,
                               std::vector<Index>& nearest) {
  Index H = gt.dim(gt.rank() - 2), W = gt.dim(gt.rank() - 1);
  dist.assign(static_cast<size_t>(H * W), 0.0);
  nearest.assign(static_cast<size_t>(H * W), -1);
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      Index idx = i * W + j;
      if (gt[idx] > 0.5) {
        nearest[static_cast<size_t>(idx)] = idx;
        continue;
      }
      long best_d2 = -1;
      Index best_idx = -1;
      Index max_r = std::max(H, W);
      for (Index r = 1; r <= max_r; ++r) {
        if (best_d2 >= 0 && static_cast<long>(r) * r > best_d2) break;
        // ring of Chebyshev radius r
        Index i0 = i - r, i1 = i + r, j0 = j - r, j1 = j + r;
        auto consider = [&](Index ii, Index jj) {
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) return;
          Index cand = ii * W + jj;
          if (gt[cand] <= 0.5) return;
          long d2 = static_cast<long>(ii - i) * (ii - i) + static_cast<long>(jj - j) * (jj - j);
          if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && cand < best_idx)) {
            best_d2 = d2;
            best_idx = cand;
          }
        };
        for (Index jj = j0; jj <= j1; ++jj) {
          consider(i0, jj);
          consider(i1, jj);
        }
        for (Index ii = i0 + 1; ii <= i1 - 1; ++ii) {
          consider(ii, j0);
          consider(ii, j1);
        }
      }
      dist[static_cast<size_t>(idx)] = std::sqrt(static_cast<double>(best_d2));
      nearest[static_cast<size_t>(idx)] = best_idx;
    }
}

inline std::vector<double> gaussian7x5() {
  std::vector<double> k(49);
  double sum = 0;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) {
      double v = std::exp(-(i * i + j * j) / (2.0 * 25.0));
      k[static_cast<size_t>((i + 3) * 7 + (j + 3))] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace detail

inline double weighted_fbeta(const Map& pred, const Map& gt) {
  validate_pair(pred, gt, "weighted_fbeta");
  Index H = gt.dim(gt.rank() - 2), W = gt.dim(gt.rank() - 1);
  Index n = H * W;
  double area = 0;
  for (Index i = 0; i < n; ++i) area += gt[i];
  if (area == 0.0) return 0.0;  // degenerate empty-GT convention

  std::vector<double> E(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) E[static_cast<size_t>(i)] = std::abs(pred[i] - gt[i]);

  std::vector<double> dist;
  std::vector<Index> nearest;
  detail::distance_transform(gt, dist, nearest);

  // error dependency: background errors take the value at the nearest fg pixel
  std::vector<double> Et = E;
  for (Index i = 0; i < n; ++i)
    if (gt[i] <= 0.5) Et[static_cast<size_t>(i)] = E[static_cast<size_t>(nearest[static_cast<size_t>(i)])];

  // 7x7 sigma-5 Gaussian, zero padding
  static const std::vector<double> kern = detail::gaussian7x5();
  std::vector<double> EA(static_cast<size_t>(n), 0.0);
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      double acc = 0;
      for (int di = -3; di <= 3; ++di)
        for (int dj = -3; dj <= 3; ++dj) {
          Index ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
          acc += Et[static_cast<size_t>(ii * W + jj)] *
                 kern[static_cast<size_t>((di + 3) * 7 + (dj + 3))];
        }
      EA[static_cast<size_t>(i * W + j)] = acc;
    }

  double ew_fg = 0, ew_bg = 0;
  const double decay = std::log(0.5) / 5.0;
  for (Index i = 0; i < n; ++i) {
    double min_e = E[static_cast<size_t>(i)];
    if (gt[i] > 0.5 && EA[static_cast<size_t>(i)] < min_e) min_e = EA[static_cast<size_t>(i)];
    double b = (gt[i] > 0.5) ? 1.0 : 2.0 - std::exp(decay * dist[static_cast<size_t>(i)]);
    double ew = min_e * b;
    if (gt[i] > 0.5) ew_fg += ew;
    else ew_bg += ew;
  }
  double tpw = area - ew_fg;
  double fpw = ew_bg;
  double recall = 1.0 - ew_fg / area;
  double precision = (tpw + fpw > 0.0) ? tpw / (tpw + fpw) : 0.0;
  if (recall + precision == 0.0) return 0.0;
  return 2.0 * recall * precision / (recall + precision);  // beta^2 = 1
}

// ---- aggregation ----

struct MetricReport {
  double s_alpha = 0, e_phi = 0, f_w_beta = 0, mae = 0;
  int n_samples = 0;
  std::string run_id;

  void accumulate(double s, double e, double f, double m) {
    s_alpha += s;
    e_phi += e;
    f_w_beta += f;
    mae += m;
    ++n_samples;
  }
  void finalize() {
    if (n_samples == 0) return;
    double dn = static_cast<double>(n_samples);
    s_alpha /= dn;
    e_phi /= dn;
    f_w_beta /= dn;
    mae /= dn;
  }
};

inline MetricReport evaluate_sample_mean(const std::vector<Map>& preds,
                                         const std::vector<Map>& gts,
                                         const std::string& run_id = {}) {
  if (preds.size() != gts.size()) throw ShapeError("evaluate: pred/gt count mismatch");
  MetricReport r;
  r.run_id = run_id;
  for (size_t i = 0; i < preds.size(); ++i)
    r.accumulate(s_measure(preds[i], gts[i]), e_measure(preds[i], gts[i]),
                 weighted_fbeta(preds[i], gts[i]), mae(preds[i], gts[i]));
  r.finalize();
  return r;
}

}  // namespace lgsan::metrics
