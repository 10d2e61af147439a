#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rtq/nn.hpp"

namespace rtq {

/// FIFO store of the most recent momentum-encoded video/text vectors and
/// their sample ids. Entries are gradient-free copies.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, std::size_t dim);

  /// Throws ContractError unless both vectors have length dim and unit norm (1e-6).
  void push(std::span<const double> video, std::span<const double> text, std::int64_t id);
  /// Pushes every row of two [B, dim] tensors.
  void push_batch(const Tensor& videos, const Tensor& texts, std::span<const std::int64_t> ids);

  std::size_t size() const { return count_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return count_ == 0; }

  /// Oldest first. [size, dim].
  Tensor videos() const;
  Tensor texts() const;
  std::vector<std::int64_t> ids() const;
  void clear();

 private:
  std::size_t slot(std::size_t age) const;
  Tensor gather(const std::vector<double>& ring) const;

  std::size_t capacity_, dim_;
  std::size_t cursor_ = 0, count_ = 0;
  std::vector<double> video_, text_;
  std::vector<std::int64_t> ids_;
};

/// Linear projections to the contrastive space plus a learnable temperature,
/// stored as its logarithm and clamped to [0.001, 0.5] when read.
struct ContrastiveHead {
  Linear video_proj;
  Linear text_proj;
  Tensor log_tau;  // [1]

  static constexpr double kMinTau = 0.001;
  static constexpr double kMaxTau = 0.5;

  static ContrastiveHead init(std::size_t d, std::size_t proj_dim, std::mt19937_64& rng, double tau = 0.07);
  /// x: [B, d] -> unit rows [B, proj_dim].
  Tensor project_video(const Tensor& x) const;
  Tensor project_text(const Tensor& x) const;
  /// Clamped temperature, shape [1].
  Tensor temperature() const;
  void collect(const std::string& prefix, ParamList& out) const;
  ContrastiveHead deep_copy() const;
};

struct VtcInputs {
  Tensor video;  // [B, D] online, unit rows
  Tensor text;   // [B, D]
  std::vector<std::int64_t> ids;
  /// Momentum-encoder vectors of the same batch; required when distill_weight > 0.
  Tensor video_momentum;
  Tensor text_momentum;
};

struct VtcLoss {
  Tensor total;  // (t2v + v2t) / 2
  Tensor t2v;
  Tensor v2t;
};

/// Contrastive loss against the bank. For query i with positive set
/// P(i) = {k : y_k = y_i} the hard term is -sum_{k in P(i)} log softmax_k,
/// and the distilled loss is (1 - w) * hard + w * KL(q_i || p_i) with q_i the
/// momentum softmax over the same bank. Averaged over the batch. The current
/// batch must already be in the bank; a missing id throws ContractError.
VtcLoss vtc_loss(const VtcInputs& inputs, const MemoryBank& bank, const Tensor& temperature,
                 double distill_weight);

/// -[log p+ + log(1 - p-v) + log(1 - p-t)], scores clamped to [1e-7, 1 - 1e-7],
/// averaged over the batch. Inputs share one shape.
Tensor vtm_loss(const Tensor& positive, const Tensor& negative_video, const Tensor& negative_text);

inline constexpr double kScoreClamp = 1e-7;

/// Samples index k with probability proportional to exp(similarity_k / tau)
/// among entries with valid[k]; throws SamplingError if none is valid.
std::size_t sample_hard_negative(std::span<const double> similarity, const std::vector<bool>& valid, double tau,
                                 std::mt19937_64& rng);

/// Mean over non-pad positions of cross-entropy against the smoothed target
/// (1 - eps on the target, eps / (V - 1) elsewhere). logits: [T, V].
Tensor lm_loss(const Tensor& logits, std::span<const int> targets, double smoothing = 0.1, int pad_id = 0);

/// shadow = mu * shadow + (1 - mu) * online, parameter by parameter.
void momentum_update(const ParamList& online, ParamList& shadow, double mu);

}  // namespace rtq
