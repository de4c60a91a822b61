#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "segkit/autodiff.hpp"

namespace segkit {

// Central-difference gradient verification, always in 64-bit arithmetic.
// `build` constructs a scalar loss from an input node:
//   ad::NodeId build(ad::Graph<double>&, ad::NodeId input)
// Callers are responsible for keeping the sampled point away from relu
// kinks and pool-window ties. When max_checks > 0, a deterministic random
// subset of coordinates is probed (seeded), otherwise all of them.
template <typename Builder>
double finite_diff_check(Builder&& build, const ad::Tensor<double>& x0, double h,
                         int max_checks = -1, std::uint64_t seed = 0) {
  auto eval = [&](const ad::Tensor<double>& x) {
    ad::Graph<double> g;
    const ad::NodeId in = g.input(x);
    const ad::NodeId loss = build(g, in);
    if (g.value(loss).numel() != 1) throw error("finite_diff_check: loss must be scalar");
    return g.value(loss).data[0];
  };

  // analytic gradient at x0
  std::vector<double> analytic;
  {
    ad::Graph<double> g;
    const ad::NodeId in = g.input(x0);
    const ad::NodeId loss = build(g, in);
    g.backward(loss);
    analytic = g.grad(in);
  }

  std::vector<std::int64_t> indices(x0.data.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<std::int64_t>(i);
  if (max_checks > 0 && static_cast<std::size_t>(max_checks) < indices.size()) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = indices.size(); i > 1; --i) {
      std::swap(indices[i - 1], indices[rng() % i]);
    }
    indices.resize(static_cast<std::size_t>(max_checks));
  }

  double worst = 0.0;
  ad::Tensor<double> x = x0;
  for (std::int64_t idx : indices) {
    const auto i = static_cast<std::size_t>(idx);
    const double saved = x.data[i];
    x.data[i] = saved + h;
    const double f_plus = eval(x);
    x.data[i] = saved - h;
    const double f_minus = eval(x);
    x.data[i] = saved;
    const double fd = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
    worst = std::max(worst, std::abs(a - fd) / denom);
  }
  return worst;
}

}  // namespace segkit
