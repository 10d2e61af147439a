#include "rtq/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rtq/error.hpp"

namespace rtq {

std::vector<double> allowed_log_probs(std::span<const double> logits) {
  if (logits.size() <= static_cast<std::size_t>(Vocabulary::kSpecialCount)) {
    throw ParameterError("vocabulary has no ordinary tokens");
  }
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < logits.size(); ++v) {
    if (v == static_cast<std::size_t>(Vocabulary::kEos) || !Vocabulary::is_special(static_cast<int>(v))) {
      top = std::max(top, logits[v]);
    }
  }
  double z = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    if (v == static_cast<std::size_t>(Vocabulary::kEos) || !Vocabulary::is_special(static_cast<int>(v))) {
      z += std::exp(logits[v] - top);
    }
  }
  const double lz = top + std::log(z);
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t v = 0; v < logits.size(); ++v) {
    if (v == static_cast<std::size_t>(Vocabulary::kEos) || !Vocabulary::is_special(static_cast<int>(v))) {
      out[v] = logits[v] - lz;
    }
  }
  return out;
}

RetrievalIndex build_retrieval_index(const RtqModel& model, const std::vector<Tensor>& videos,
                                     const std::vector<std::int64_t>& ids, std::size_t recall_depth) {
  if (videos.size() != ids.size()) throw ParameterError("video and id counts differ");
  if (videos.empty()) throw ParameterError("retrieval corpus is empty");
  NoGradGuard guard;
  RetrievalIndex index;
  index.ids = ids;
  index.recall_depth = recall_depth;
  std::vector<Tensor> rows;
  for (const auto& pixels : videos) {
    const SegmentedVideoEmbedding v = encode_video(model, pixels);
    rows.push_back(video_vector(model, v));
    index.memories.push_back(flatten_video(v));
  }
  index.vectors = concat(rows, 0);
  return index;
}

std::vector<RankedVideo> retrieve(const RtqModel& model, std::span<const int> query, const RetrievalIndex& index) {
  const std::size_t N = index.ids.size();
  if (N == 0) throw ParameterError("retrieval corpus is empty");
  if (index.recall_depth == 0) throw ParameterError("recall depth Q must be positive");
  if (index.recall_depth > N) {
    throw ParameterError("recall depth Q=" + std::to_string(index.recall_depth) + " exceeds corpus size " +
                         std::to_string(N));
  }
  NoGradGuard guard;
  const Tensor t = text_vector(model, query);
  const Tensor sims = matmul(index.vectors, transpose(t));  // [N, 1]
  std::vector<RankedVideo> ranked(N);
  for (std::size_t i = 0; i < N; ++i) ranked[i] = {i, index.ids[i], sims.data()[i], 0.0, sims.data()[i]};
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedVideo& a, const RankedVideo& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.id < b.id;
  });
  const std::size_t Q = index.recall_depth;
  for (std::size_t r = 0; r < Q; ++r) {
    const Tensor logit = match_logit(model, query, index.memories[ranked[r].entry]);
    ranked[r].matching = sigmoid(logit).item();
    ranked[r].score = ranked[r].cosine + ranked[r].matching;
  }
  std::stable_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(Q),
                   [](const RankedVideo& a, const RankedVideo& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.id < b.id;
                   });
  return ranked;
}

DecodeResult caption_memory(const RtqModel& model, const Tensor& memory, const BeamOptions& options) {
  BeamOptions o = options;
  o.max_len = std::min(o.max_len, model.text.max_len);
  return beam_search(IncrementalDecoder(model.text, memory), o);
}

DecodeResult caption(const RtqModel& model, const Tensor& pixels, const BeamOptions& options) {
  NoGradGuard guard;
  return caption_memory(model, flatten_video(encode_video(model, pixels)), options);
}

Tensor question_memory(const RtqModel& model, std::span<const int> question, const Tensor& video_memory) {
  const auto ids = with_prefix(Vocabulary::kEncode, question);
  return video_grounded_encode(model.text, ids, video_memory);
}

DecodeResult answer_open(const RtqModel& model, const Tensor& pixels, std::span<const int> question,
                         const BeamOptions& options) {
  NoGradGuard guard;
  const Tensor memory = question_memory(model, question, flatten_video(encode_video(model, pixels)));
  return caption_memory(model, memory, options);
}

std::vector<double> score_choices_memory(const RtqModel& model, const Tensor& memory,
                                         std::span<const int> question,
                                         const std::vector<std::vector<int>>& choices) {
  if (choices.size() < 2) throw ParameterError("multiple-choice scoring needs at least two choices");
  NoGradGuard guard;
  std::vector<Tensor> logits;
  for (const auto& c : choices) logits.push_back(reshape(choice_logit(model, question, c, memory), {1}));
  const Tensor p = softmax(concat(logits, 0), 0);
  return {p.data().begin(), p.data().end()};
}

std::vector<double> score_choices(const RtqModel& model, const Tensor& pixels, std::span<const int> question,
                                  const std::vector<std::vector<int>>& choices) {
  NoGradGuard guard;
  return score_choices_memory(model, flatten_video(encode_video(model, pixels)), question, choices);
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k, std::size_t corpus_size) {
  if (ranks.empty()) throw ParameterError("recall over no queries");
  if (k == 0 || k > corpus_size) {
    throw ParameterError("recall depth k=" + std::to_string(k) + " outside [1, " + std::to_string(corpus_size) + "]");
  }
  std::size_t hits = 0;
  for (auto r : ranks) hits += (r >= 1 && r <= k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ParameterError("median rank over no queries");
  std::vector<std::size_t> r(ranks.begin(), ranks.end());
  std::sort(r.begin(), r.end());
  const std::size_t n = r.size();
  if (n % 2 == 1) return static_cast<double>(r[n / 2]);
  return 0.5 * static_cast<double>(r[n / 2 - 1] + r[n / 2]);
}

double accuracy(std::span<const int> predictions, std::span<const int> targets) {
  if (predictions.size() != targets.size()) throw ParameterError("prediction and target counts differ");
  if (predictions.empty()) throw ParameterError("accuracy over no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double bleu4(const std::vector<std::vector<std::string>>& candidates,
             const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) throw ParameterError("candidate and reference counts differ");
  if (candidates.empty()) throw ParameterError("BLEU over an empty corpus");
  double matched[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& r = references[s];
    cand_len += c.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + i, c.begin() + i + n}];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        matched[n - 1] += static_cast<double>(std::min(count, it == ref_counts.end() ? 0 : it->second));
        total[n - 1] += static_cast<double>(count);
      }
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0.0 || matched[n] == 0.0) return 0.0;
    log_sum += 0.25 * std::log(matched[n] / total[n]);
  }
  const double bp = cand_len >= ref_len ? 1.0
                                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum);
}

}  // namespace rtq
