#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace rtq::testing {

using Matrix = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> softmax_row(const std::vector<double>& x) {
  double top = x[0];
  for (double v : x) top = std::max(top, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - top);
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::exp(x[i] - top) / z;
  return p;
}

/// One contrastive direction by direct summation.
inline double vtc_direction(const Matrix& queries, const Matrix& keys, const std::vector<std::int64_t>& query_ids,
                            const std::vector<std::int64_t>& key_ids, double tau, double w,
                            const Matrix& momentum_queries = {}) {
  double total = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<double> s(keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) s[k] = dot(queries[i], keys[k]) / tau;
    const auto p = softmax_row(s);
    double hard = 0.0;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (key_ids[k] == query_ids[i]) hard -= std::log(p[k]);
    }
    double kl = 0.0;
    if (w > 0.0) {
      std::vector<double> sm(keys.size());
      for (std::size_t k = 0; k < keys.size(); ++k) sm[k] = dot(momentum_queries[i], keys[k]) / tau;
      const auto q = softmax_row(sm);
      for (std::size_t k = 0; k < keys.size(); ++k) {
        if (q[k] > 0.0) kl += q[k] * (std::log(q[k]) - std::log(p[k]));
      }
    }
    total += (1.0 - w) * hard + w * kl;
  }
  return total / static_cast<double>(queries.size());
}

inline double vtm_oracle(const std::vector<double>& pos, const std::vector<double>& neg_v,
                         const std::vector<double>& neg_t) {
  auto c = [](double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); };
  double s = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    s -= std::log(c(pos[i])) + std::log(1.0 - c(neg_v[i])) + std::log(1.0 - c(neg_t[i]));
  }
  return s / static_cast<double>(pos.size());
}

/// Smoothed cross-entropy per non-pad row, averaged.
inline double lm_oracle(const Matrix& logits, const std::vector<int>& targets, double eps, int pad = 0) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (targets[t] == pad) continue;
    const auto p = softmax_row(logits[t]);
    const std::size_t V = p.size();
    for (std::size_t v = 0; v < V; ++v) {
      const double q = static_cast<int>(v) == targets[t] ? 1.0 - eps : eps / static_cast<double>(V - 1);
      s -= q * std::log(p[v]);
    }
    ++n;
  }
  return s / static_cast<double>(n);
}

}  // namespace rtq::testing
