#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "wccn/tensor.hpp"

namespace wccn::testutil {

// Central finite-difference gradient check. `build` must reconstruct the
// scalar loss from the current values of `params` on every call.
inline double max_rel_error(const std::function<Tensor()>& build,
                            std::vector<Tensor> params, double eps = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = build();
  backward(loss);
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + eps;
      const double lp = build().item();
      p.data()[i] = orig - eps;
      const double lm = build().item();
      p.data()[i] = orig;
      const double fd = (lp - lm) / (2 * eps);
      const double an = p.grad().empty() ? 0.0 : p.grad()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                            bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace wccn::testutil
