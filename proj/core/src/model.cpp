#include "rtq/model.hpp"

#include <cmath>

#include "rtq/error.hpp"
#include "rtq/vocabulary.hpp"

namespace rtq {

MoedConfig ModelConfig::moed() const {
  MoedConfig m;
  m.vocab_size = vocab_size;
  m.hidden = encoder.hidden;
  m.heads = encoder.heads;
  m.layers = encoder.layers;
  m.max_len = max_len;
  m.mlp_ratio = encoder.mlp_ratio;
  return m;
}

void ModelConfig::validate() const {
  encoder.validate();
  moed().validate();
  if (proj_dim == 0) throw ParameterError("projection dimension must be positive");
  if (!(tau_init >= ContrastiveHead::kMinTau && tau_init <= ContrastiveHead::kMaxTau)) {
    throw ParameterError("initial temperature outside [0.001, 0.5]");
  }
}

RtqModel RtqModel::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  RtqModel m;
  m.config = config;
  m.video = VideoEncoderParams::init(config.encoder, rng);
  m.text = MoedParams::init(config.moed(), rng);
  m.contrastive = ContrastiveHead::init(config.encoder.hidden, config.proj_dim, rng, config.tau_init);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(config.encoder.hidden));
  m.match_head = Linear::init(config.encoder.hidden, 1, rng, stddev);
  m.choice_head = Linear::init(config.encoder.hidden, 1, rng, stddev);
  return m;
}

ParamList RtqModel::parameters() const {
  ParamList out;
  video.collect("video", out);
  text.collect("text", out);
  contrastive.collect("contrastive", out);
  match_head.collect("match_head", out);
  choice_head.collect("choice_head", out);
  return out;
}

RtqModel RtqModel::deep_copy() const {
  RtqModel m;
  m.config = config;
  m.video = video.deep_copy();
  m.text = text.deep_copy();
  m.contrastive = contrastive.deep_copy();
  m.match_head = match_head.deep_copy();
  m.choice_head = choice_head.deep_copy();
  return m;
}

SegmentedVideoEmbedding encode_video(const RtqModel& model, const Tensor& pixels) {
  return encode_video(pixels, model.config.encoder, model.video);
}

Tensor video_cls(const SegmentedVideoEmbedding& video) {
  const std::size_t S = video.values.dim(0), d = video.values.dim(2);
  const Tensor cls = reshape(slice(video.values, 1, 0, 1), {1, S, d});
  return scale(reshape(matmul(Tensor::full({1, S}, 1.0), reshape(cls, {S, d})), {1, d}), 1.0 / double(S));
}

Tensor video_vector(const RtqModel& model, const SegmentedVideoEmbedding& video) {
  return model.contrastive.project_video(video_cls(video));
}

std::vector<int> with_prefix(int first, std::span<const int> words) {
  std::vector<int> ids;
  ids.reserve(words.size() + 1);
  ids.push_back(first);
  ids.insert(ids.end(), words.begin(), words.end());
  return ids;
}

Tensor text_vector(const RtqModel& model, std::span<const int> caption_ids) {
  const auto ids = with_prefix(Vocabulary::kCls, caption_ids);
  const Tensor hidden = text_encode(model.text, ids);
  return model.contrastive.project_text(slice(hidden, 0, 0, 1));
}

Tensor match_logit(const RtqModel& model, std::span<const int> words, const Tensor& memory) {
  const auto ids = with_prefix(Vocabulary::kEncode, words);
  return model.match_head(slice(video_grounded_encode(model.text, ids, memory), 0, 0, 1));
}

Tensor choice_logit(const RtqModel& model, std::span<const int> question, std::span<const int> answer,
                    const Tensor& memory) {
  std::vector<int> ids = with_prefix(Vocabulary::kEncode, question);
  ids.insert(ids.end(), answer.begin(), answer.end());
  return model.choice_head(slice(video_grounded_encode(model.text, ids, memory), 0, 0, 1));
}

}  // namespace rtq
