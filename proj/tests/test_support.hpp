#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tdn/tensor.hpp"

namespace testsup {

inline tdn::Tensor random_tensor(tdn::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  const auto n = tdn::shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(rng);
  return tdn::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Central finite differences on every element of `leaf` against the analytic
// gradient of scalar_fn() (which must rebuild the graph from current values).
inline double fd_max_rel_err(tdn::Tensor leaf, const std::function<tdn::Tensor()>& scalar_fn,
                             double h = 1e-4) {
  leaf.zero_grad();
  tdn::Tensor loss = scalar_fn();
  loss.backward();
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  auto vals = leaf.values_mut();
  double worst = 0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    double lp, lm;
    {
      tdn::NoGradGuard ng;
      vals[i] = saved + h;
      lp = scalar_fn().scalar();
      vals[i] = saved - h;
      lm = scalar_fn().scalar();
      vals[i] = saved;
    }
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-6});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace testsup
