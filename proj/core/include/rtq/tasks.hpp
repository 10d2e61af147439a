#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rtq/decoding.hpp"
#include "rtq/model.hpp"

namespace rtq {

/// Corpus side of two-stage retrieval.
struct RetrievalIndex {
  Tensor vectors;                  // [N, proj_dim], unit rows
  std::vector<Tensor> memories;    // flattened refined video per entry
  std::vector<std::int64_t> ids;   // video ids
  std::size_t recall_depth = 128;  // Q
};

/// Encodes every video once (no gradients).
RetrievalIndex build_retrieval_index(const RtqModel& model, const std::vector<Tensor>& videos,
                                     const std::vector<std::int64_t>& ids, std::size_t recall_depth);

struct RankedVideo {
  std::size_t entry = 0;  // position in the index
  std::int64_t id = 0;
  double cosine = 0.0;
  double matching = 0.0;  // sigmoid matching score; 0 outside the top Q
  double score = 0.0;     // cosine + matching for the top Q
};

/// Stage 1 ranks all entries by cosine similarity of contrastive vectors and
/// keeps the top Q; stage 2 adds the sigmoid matching score of each
/// candidate. The top Q come first by final score, the remainder follow by
/// cosine. Ties are broken by video id.
std::vector<RankedVideo> retrieve(const RtqModel& model, std::span<const int> query, const RetrievalIndex& index);

/// Beam search over the video-grounded decoder.
DecodeResult caption(const RtqModel& model, const Tensor& pixels, const BeamOptions& options = {});
DecodeResult caption_memory(const RtqModel& model, const Tensor& memory, const BeamOptions& options = {});

/// Per-token outputs of video_grounded_encode([Encode] + question) used as
/// the decoder memory for open-ended answers.
Tensor question_memory(const RtqModel& model, std::span<const int> question, const Tensor& video_memory);
DecodeResult answer_open(const RtqModel& model, const Tensor& pixels, std::span<const int> question,
                         const BeamOptions& options = {});

/// Softmax over per-choice logits. Throws ParameterError for fewer than two choices.
std::vector<double> score_choices(const RtqModel& model, const Tensor& pixels, std::span<const int> question,
                                  const std::vector<std::vector<int>>& choices);
std::vector<double> score_choices_memory(const RtqModel& model, const Tensor& memory,
                                         std::span<const int> question,
                                         const std::vector<std::vector<int>>& choices);

// Metrics. A ranking is the 1-based rank of the ground-truth item per query.
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k, std::size_t corpus_size);
double median_rank(std::span<const std::size_t> ranks);
double accuracy(std::span<const int> predictions, std::span<const int> targets);
/// Corpus BLEU-4: uniform 1..4-gram weights, clipped counts, brevity penalty,
/// one reference per candidate. Zero when any n-gram precision is zero.
double bleu4(const std::vector<std::vector<std::string>>& candidates,
             const std::vector<std::vector<std::string>>& references);

}  // namespace rtq
