#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rtq/nn.hpp"
#include "rtq/tensor.hpp"

namespace rtq::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor) per leaf,
/// maximised over leaves. Central differences with step h.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                  double h = 1e-5, std::size_t max_entries_per_leaf = 0,
                                  std::uint64_t sample_seed = 0, double floor = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss_fn());
  GradCheckResult out;
  std::mt19937_64 rng(sample_seed);
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> entries(leaf.numel());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (max_entries_per_leaf > 0 && entries.size() > max_entries_per_leaf) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries_per_leaf);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto data = leaf.mutable_data();
    for (auto i : entries) {
      const double saved = data[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        data[i] = saved + h;
        plus = loss_fn().item();
        data[i] = saved - h;
        minus = loss_fn().item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::sqrt(diff2) / denom);
    out.checked += entries.size();
  }
  return out;
}

inline std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

/// Overwrites every parameter with N(0, stddev) values (LayerNorm gains around 1).
inline void randomize(const ParamList& params, std::mt19937_64& rng, double stddev = 0.3) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (const auto& p : params) {
    auto t = p.tensor;
    const bool gain = p.name.find("gain") != std::string::npos;
    for (auto& v : t.mutable_data()) v = (gain ? 1.0 : 0.0) + normal(rng);
  }
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0, bool grad = true) {
  return Tensor::randn(std::move(shape), rng, stddev, grad);
}

}  // namespace rtq::testing
