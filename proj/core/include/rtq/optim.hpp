#pragma once

#include <cstddef>
#include <vector>

#include "rtq/nn.hpp"

namespace rtq {

/// Linear warm-up, a flat stretch, then cosine annealing to `min_lr`.
struct LrSchedule {
  double base_lr = 1e-4;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 10000;
  /// Fraction of total_steps after which annealing begins.
  double anneal_start_fraction = 0.1;
  double min_lr = 0.0;

  /// Effective rate for the 0-based optimizer step.
  double at(std::size_t step) const;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;
};

/// AdamW with decoupled weight decay. Moments are stored per parameter in
/// the order given at construction.
class AdamW {
 public:
  AdamW(ParamList params, AdamWOptions options, LrSchedule schedule);

  /// Applies one update from the parameters' accumulated gradients
  /// (a parameter with no gradient is treated as having zero gradient).
  void step();
  void zero_grad();

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t step) { step_ = step; }
  double current_lr() const { return schedule_.at(step_); }

  const ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const LrSchedule& schedule() const { return schedule_; }

 private:
  ParamList params_;
  AdamWOptions options_;
  LrSchedule schedule_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace rtq
