#pragma once

#include <functional>
#include <vector>

#include "lgsan/core/autograd.hpp"
#include "lgsan/core/rng.hpp"

namespace lgsan::testutil {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite differences against reverse-mode gradients.
// f must build a scalar Var from the supplied leaves and be pure.
struct GradCheck {
  using Fn = std::function<Var<double>(std::vector<Var<double>>&)>;

  static double max_rel_err(const Fn& f, std::vector<Tensor<double>> inputs, double h = 1e-5) {
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (auto& t : inputs) leaves.emplace_back(t, true);
    Var<double> loss = f(leaves);
    if (loss.numel() != 1) throw std::runtime_error("GradCheck: loss must be scalar");
    backward(loss);

    auto eval = [&](const std::vector<Tensor<double>>& xs) {
      NoGradGuard ng;
      std::vector<Var<double>> vs;
      vs.reserve(xs.size());
      for (auto& t : xs) vs.emplace_back(t, false);
      return f(vs).value()[0];
    };

    double worst = 0.0;
    double gmax = 1e-10;
    std::vector<double> fd_all, an_all;
    for (size_t k = 0; k < inputs.size(); ++k) {
      const Tensor<double>& g = leaves[k].grad();
      for (Index i = 0; i < inputs[k].numel(); ++i) {
        auto xs = inputs;
        xs[k][i] += h;
        double lp = eval(xs);
        xs[k][i] -= 2 * h;
        double lm = eval(xs);
        double fd = (lp - lm) / (2 * h);
        double an = g.empty() ? 0.0 : g[i];
        fd_all.push_back(fd);
        an_all.push_back(an);
        gmax = std::max(gmax, std::abs(fd));
      }
    }
    for (size_t i = 0; i < fd_all.size(); ++i)
      worst = std::max(worst, std::abs(fd_all[i] - an_all[i]) / gmax);
    return worst;
  }
};

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace lgsan::testutil
