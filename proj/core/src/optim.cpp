#include "rtq/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rtq {

double LrSchedule::at(std::size_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const auto anneal_start = std::max<std::size_t>(
      warmup_steps, static_cast<std::size_t>(std::llround(anneal_start_fraction * static_cast<double>(total_steps))));
  if (step < anneal_start) return base_lr;
  const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - std::min(total_steps, anneal_start)));
  const double progress = std::min(1.0, static_cast<double>(step - anneal_start) / span);
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(ParamList params, AdamWOptions options, LrSchedule schedule)
    : params_(std::move(params)), options_(options), schedule_(schedule) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  const double lr = schedule_.at(step_);
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool has_grad = p.has_grad();
    const double* g = has_grad ? p.grad().data() : nullptr;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
      w[j] -= lr * (update + options_.weight_decay * w[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace rtq
