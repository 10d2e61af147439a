#pragma once

#include <random>
#include <span>
#include <vector>

#include "rtq/moed.hpp"
#include "rtq/objectives.hpp"
#include "rtq/temporal.hpp"

namespace rtq {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t proj_dim = 64;
  double tau_init = 0.07;

  MoedConfig moed() const;
  void validate() const;
};

/// Video encoder, MoED text stack and the task heads.
struct RtqModel {
  ModelConfig config;
  VideoEncoderParams video;
  MoedParams text;
  ContrastiveHead contrastive;
  Linear match_head;   // [Encode] -> matching logit
  Linear choice_head;  // [Encode] -> multiple-choice logit

  static RtqModel init(const ModelConfig& config, std::mt19937_64& rng);
  ParamList parameters() const;
  RtqModel deep_copy() const;
};

SegmentedVideoEmbedding encode_video(const RtqModel& model, const Tensor& pixels);

/// Video-level [CLS]: mean of the segment [CLS] rows. [1, d].
Tensor video_cls(const SegmentedVideoEmbedding& video);

/// Unit contrastive vectors, [1, proj_dim].
Tensor video_vector(const RtqModel& model, const SegmentedVideoEmbedding& video);
Tensor text_vector(const RtqModel& model, std::span<const int> caption_ids);

/// `first` followed by `words`.
std::vector<int> with_prefix(int first, std::span<const int> words);

/// Matching logit of [Encode] + words against the video memory. [1, 1].
Tensor match_logit(const RtqModel& model, std::span<const int> words, const Tensor& memory);
/// Multiple-choice logit for [Encode] + question + answer. [1, 1].
Tensor choice_logit(const RtqModel& model, std::span<const int> question, std::span<const int> answer,
                    const Tensor& memory);

}  // namespace rtq
