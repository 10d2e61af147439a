#include "rtq/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "rtq/error.hpp"

namespace rtq {

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), video_(capacity * dim), text_(capacity * dim), ids_(capacity) {
  if (capacity == 0 || dim == 0) throw ParameterError("memory bank needs positive capacity and dimension");
}

namespace {

void check_unit(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim) {
    throw ContractError(std::string(what) + " vector has " + std::to_string(v.size()) + " entries, expected " +
                        std::to_string(dim));
  }
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (std::abs(std::sqrt(ss) - 1.0) > 1e-6) throw ContractError(std::string(what) + " vector is not unit-norm");
}

}  // namespace

void MemoryBank::push(std::span<const double> video, std::span<const double> text, std::int64_t id) {
  check_unit(video, dim_, "video");
  check_unit(text, dim_, "text");
  std::copy(video.begin(), video.end(), video_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
  std::copy(text.begin(), text.end(), text_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
  ids_[cursor_] = id;
  cursor_ = (cursor_ + 1) % capacity_;
  count_ = std::min(count_ + 1, capacity_);
}

void MemoryBank::push_batch(const Tensor& videos, const Tensor& texts, std::span<const std::int64_t> ids) {
  if (videos.rank() != 2 || videos.shape() != texts.shape() || videos.dim(0) != ids.size()) {
    throw ShapeError("bank batch mismatch: " + shape_string(videos.shape()) + " vs " + shape_string(texts.shape()));
  }
  const std::size_t d = videos.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    push(videos.data().subspan(i * d, d), texts.data().subspan(i * d, d), ids[i]);
  }
}

std::size_t MemoryBank::slot(std::size_t age) const {
  // age 0 is the oldest stored entry.
  const std::size_t oldest = count_ < capacity_ ? 0 : cursor_;
  return (oldest + age) % capacity_;
}

Tensor MemoryBank::gather(const std::vector<double>& ring) const {
  if (count_ == 0) throw ContractError("memory bank is empty");
  std::vector<double> out(count_ * dim_);
  for (std::size_t a = 0; a < count_; ++a) {
    const std::size_t s = slot(a);
    std::copy_n(ring.begin() + static_cast<std::ptrdiff_t>(s * dim_), dim_,
                out.begin() + static_cast<std::ptrdiff_t>(a * dim_));
  }
  return Tensor::from({count_, dim_}, std::move(out));
}

Tensor MemoryBank::videos() const { return gather(video_); }
Tensor MemoryBank::texts() const { return gather(text_); }

std::vector<std::int64_t> MemoryBank::ids() const {
  std::vector<std::int64_t> out(count_);
  for (std::size_t a = 0; a < count_; ++a) out[a] = ids_[slot(a)];
  return out;
}

void MemoryBank::clear() {
  cursor_ = 0;
  count_ = 0;
}

ContrastiveHead ContrastiveHead::init(std::size_t d, std::size_t proj_dim, std::mt19937_64& rng, double tau) {
  if (!(tau >= kMinTau && tau <= kMaxTau)) throw ParameterError("initial temperature outside [0.001, 0.5]");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  return {Linear::init(d, proj_dim, rng, stddev), Linear::init(d, proj_dim, rng, stddev),
          Tensor::from({1}, {std::log(tau)}, true)};
}

Tensor ContrastiveHead::project_video(const Tensor& x) const { return l2_normalize(video_proj(x), -1); }
Tensor ContrastiveHead::project_text(const Tensor& x) const { return l2_normalize(text_proj(x), -1); }

Tensor ContrastiveHead::temperature() const {
  return exp(clamp(log_tau, std::log(kMinTau), std::log(kMaxTau)));
}

void ContrastiveHead::collect(const std::string& prefix, ParamList& out) const {
  video_proj.collect(prefix + ".video_proj", out);
  text_proj.collect(prefix + ".text_proj", out);
  out.push_back({prefix + ".log_tau", log_tau});
}

ContrastiveHead ContrastiveHead::deep_copy() const {
  return {video_proj.deep_copy(), text_proj.deep_copy(), log_tau.clone()};
}

namespace {

// One direction: queries [B, D] against bank keys [M, D].
Tensor directional_loss(const Tensor& queries, const Tensor& keys, const Tensor& inv_tau,
                        const std::vector<double>& positives, const Tensor& momentum_queries, double w) {
  const std::size_t B = queries.dim(0), M = keys.dim(0);
  const Tensor logits = mul_scalar(matmul(queries, transpose(keys)), inv_tau);
  const Tensor logp = log_softmax(logits, -1);
  const Tensor mask = Tensor::from({B, M}, positives);
  Tensor loss = scale(sum(mul(logp, mask)), -(1.0 - w) / static_cast<double>(B));
  if (w > 0.0) {
    std::vector<double> q, entropy_term(1, 0.0);
    {
      NoGradGuard guard;
      const Tensor soft = softmax(mul_scalar(matmul(momentum_queries, transpose(keys)), inv_tau.detach()), -1);
      q.assign(soft.data().begin(), soft.data().end());
    }
    for (double v : q) {
      if (v > 0.0) entropy_term[0] += v * std::log(v);
    }
    const Tensor target = Tensor::from({B, M}, std::move(q));
    // KL(q || p) = sum q log q - sum q log p.
    const Tensor kl = add_scalar(scale(sum(mul(logp, target)), -1.0), entropy_term[0]);
    loss = add(loss, scale(kl, w / static_cast<double>(B)));
  }
  return loss;
}

}  // namespace

VtcLoss vtc_loss(const VtcInputs& in, const MemoryBank& bank, const Tensor& temperature, double w) {
  if (bank.empty()) throw ContractError("contrastive loss needs a non-empty memory bank");
  if (in.video.rank() != 2 || in.video.shape() != in.text.shape() || in.video.dim(0) != in.ids.size()) {
    throw ShapeError("contrastive batch mismatch: video " + shape_string(in.video.shape()) + ", text " +
                     shape_string(in.text.shape()));
  }
  if (in.video.dim(1) != bank.dim()) throw ShapeError("batch vectors do not match the bank dimension");
  if (w < 0.0 || w > 1.0) throw ParameterError("distillation weight must lie in [0, 1]");
  if (w > 0.0 && (!in.video_momentum.defined() || !in.text_momentum.defined())) {
    throw ContractError("distillation needs momentum vectors for the batch");
  }
  const std::size_t B = in.ids.size();
  const auto bank_ids = bank.ids();
  const std::size_t M = bank_ids.size();
  std::vector<double> positives(B * M, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    bool found = false;
    for (std::size_t k = 0; k < M; ++k) {
      if (bank_ids[k] == in.ids[i]) {
        positives[i * M + k] = 1.0;
        found = true;
      }
    }
    if (!found) throw ContractError("sample id " + std::to_string(in.ids[i]) + " is missing from the memory bank");
  }
  const Tensor inv_tau = exp(scale(log(temperature), -1.0));
  VtcLoss out;
  out.t2v = directional_loss(in.text, bank.videos(), inv_tau, positives, in.text_momentum, w);
  out.v2t = directional_loss(in.video, bank.texts(), inv_tau, positives, in.video_momentum, w);
  out.total = scale(add(out.t2v, out.v2t), 0.5);
  return out;
}

Tensor vtm_loss(const Tensor& positive, const Tensor& negative_video, const Tensor& negative_text) {
  if (positive.shape() != negative_video.shape() || positive.shape() != negative_text.shape()) {
    throw ShapeError("matching scores must share one shape");
  }
  const double lo = kScoreClamp, hi = 1.0 - kScoreClamp;
  auto complement = [&](const Tensor& p) { return add_scalar(scale(clamp(p, lo, hi), -1.0), 1.0); };
  const Tensor terms = add(add(log(clamp(positive, lo, hi)), log(complement(negative_video))),
                           log(complement(negative_text)));
  return scale(sum(terms), -1.0 / static_cast<double>(positive.numel()));
}

std::size_t sample_hard_negative(std::span<const double> similarity, const std::vector<bool>& valid, double tau,
                                 std::mt19937_64& rng) {
  if (valid.size() != similarity.size()) throw ShapeError("validity mask does not match similarity row");
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < similarity.size(); ++k) {
    if (valid[k]) top = std::max(top, similarity[k] / tau);
  }
  if (top == -std::numeric_limits<double>::infinity()) throw SamplingError("no valid negative to sample");
  std::vector<double> weights(similarity.size(), 0.0);
  for (std::size_t k = 0; k < similarity.size(); ++k) {
    if (valid[k]) weights[k] = std::exp(similarity[k] / tau - top);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return pick(rng);
}

Tensor lm_loss(const Tensor& logits, std::span<const int> targets, double smoothing, int pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("logits " + shape_string(logits.shape()) + " do not match " + std::to_string(targets.size()) +
                     " targets");
  }
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (V < 2) throw ParameterError("label smoothing needs at least two classes");
  if (smoothing < 0.0 || smoothing >= 1.0) throw ParameterError("smoothing must lie in [0, 1)");
  std::vector<double> q(T * V, 0.0);
  std::size_t counted = 0;
  const double off = smoothing / static_cast<double>(V - 1);
  for (std::size_t t = 0; t < T; ++t) {
    const int y = targets[t];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= V) throw TokenizationError("target id out of range");
    for (std::size_t v = 0; v < V; ++v) q[t * V + v] = off;
    q[t * V + static_cast<std::size_t>(y)] = 1.0 - smoothing;
    ++counted;
  }
  if (counted == 0) throw ContractError("language-model loss over an all-padding target");
  const Tensor target = Tensor::from({T, V}, std::move(q));
  return scale(sum(mul(log_softmax(logits, -1), target)), -1.0 / static_cast<double>(counted));
}

void momentum_update(const ParamList& online, ParamList& shadow, double mu) {
  if (online.size() != shadow.size()) throw ShapeError("momentum encoder parameter count mismatch");
  if (mu < 0.0 || mu > 1.0) throw ParameterError("momentum must lie in [0, 1]");
  for (std::size_t i = 0; i < online.size(); ++i) {
    if (online[i].tensor.shape() != shadow[i].tensor.shape()) {
      throw ShapeError("momentum shape mismatch for " + online[i].name);
    }
    Tensor target = shadow[i].tensor;
    auto dst = target.mutable_data();
    const auto src = online[i].tensor.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = mu * dst[j] + (1.0 - mu) * src[j];
  }
}

}  // namespace rtq
