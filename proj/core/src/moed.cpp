#include "rtq/moed.hpp"

#include <cmath>

#include "rtq/error.hpp"
#include "rtq/vocabulary.hpp"

namespace rtq {

void MoedConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kSpecialCount)) {
    throw ParameterError("vocabulary must contain at least one non-special token");
  }
  if (heads == 0 || hidden % heads != 0) {
    throw ParameterError("hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (layers == 0) throw ParameterError("MoED needs at least one layer");
  if (max_len < 2) throw ParameterError("max_len must be at least 2");
  if (mlp_ratio == 0) throw ParameterError("mlp_ratio must be positive");
}

void MoedLayer::collect(const std::string& prefix, ParamList& out) const {
  ln_self.collect(prefix + ".ln_self", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln_cross.collect(prefix + ".ln_cross", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

MoedLayer MoedLayer::deep_copy() const {
  return {ln_self.deep_copy(),  self_attn.deep_copy(), ln_cross.deep_copy(),
          cross_attn.deep_copy(), ln_ffn.deep_copy(),  ffn.deep_copy()};
}

MoedParams MoedParams::init(const MoedConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.hidden;
  MoedParams p;
  p.token_embedding = Tensor::randn({config.vocab_size, d}, rng, 0.02, true);
  p.position_embedding = Tensor::randn({config.max_len, d}, rng, 0.02, true);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.layers.push_back({LayerNorm::init(d), MultiHeadAttention::init(d, config.heads, rng), LayerNorm::init(d),
                        MultiHeadAttention::init(d, config.heads, rng), LayerNorm::init(d),
                        FeedForward::init(d, d * config.mlp_ratio, rng)});
  }
  p.final_ln = LayerNorm::init(d);
  p.lm_head = Linear::init(d, config.vocab_size, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  p.max_len = config.max_len;
  return p;
}

void MoedParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".token_embedding", token_embedding});
  out.push_back({prefix + ".position_embedding", position_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer" + std::to_string(l), out);
  final_ln.collect(prefix + ".final_ln", out);
  lm_head.collect(prefix + ".lm_head", out);
}

MoedParams MoedParams::deep_copy() const {
  MoedParams p;
  p.token_embedding = token_embedding.clone();
  p.position_embedding = position_embedding.clone();
  for (const auto& l : layers) p.layers.push_back(l.deep_copy());
  p.final_ln = final_ln.deep_copy();
  p.lm_head = lm_head.deep_copy();
  p.max_len = max_len;
  return p;
}

namespace {

void check_ids(const MoedParams& params, std::span<const int> ids) {
  if (ids.empty()) throw TokenizationError("empty token sequence");
  if (ids.size() > params.max_len) {
    throw TokenizationError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                            std::to_string(params.max_len));
  }
  const int v = static_cast<int>(params.vocab_size());
  for (int id : ids) {
    if (id < 0 || id >= v) throw TokenizationError("token id " + std::to_string(id) + " out of range");
  }
}

void expect_first(std::span<const int> ids, int token, const char* name) {
  if (ids.empty() || ids[0] != token) throw ContractError(std::string("sequence must start with ") + name);
}

Tensor as_memory(const Tensor& memory, std::size_t d) {
  const auto& s = memory.shape();
  if (s.size() == 2 && s[1] == d) return reshape(memory, {1, s[0], d});
  if (s.size() == 3 && s[0] == 1 && s[2] == d) return memory;
  throw ShapeError("memory must be [R, d] or [1, R, d] with d=" + std::to_string(d) + ", got " + shape_string(s));
}

Tensor embed(const MoedParams& params, std::span<const int> ids, std::size_t offset) {
  const std::size_t T = ids.size(), d = params.hidden();
  const Tensor tokens = embedding_lookup(params.token_embedding, ids);
  const Tensor positions = slice(params.position_embedding, 0, offset, T);
  return reshape(add(tokens, positions), {1, T, d});
}

Tensor build_mask(std::span<const int> ids, SelfAttentionMask kind) {
  const std::size_t T = ids.size();
  bool any = false;
  std::vector<double> m(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      if ((kind == SelfAttentionMask::causal && j > i) || ids[j] == Vocabulary::kPad) {
        m[i * T + j] = kMaskedLogit;
        any = true;
      }
    }
  }
  return any ? Tensor::from({T, T}, std::move(m)) : Tensor();
}

}  // namespace

Tensor moed_forward(const MoedParams& params, std::span<const int> ids, SelfAttentionMask mask_kind,
                    const Tensor& memory, MoedTrace* trace) {
  check_ids(params, ids);
  const std::size_t d = params.hidden();
  Tensor x = embed(params, ids, 0);
  const Tensor mask = build_mask(ids, mask_kind);
  Tensor mem;
  if (memory.defined()) mem = as_memory(memory, d);
  for (const auto& layer : params.layers) {
    Tensor probs;
    const Tensor h = layer.ln_self(x);
    x = add(x, layer.self_attn(h, h, mask, trace ? &probs : nullptr));
    if (trace) trace->self_probs.push_back(probs);
    if (mem.defined()) {
      x = add(x, layer.cross_attn(layer.ln_cross(x), mem, {}, trace ? &probs : nullptr));
      if (trace) trace->cross_probs.push_back(probs);
    }
    x = add(x, layer.ffn(layer.ln_ffn(x)));
  }
  return reshape(params.final_ln(x), {ids.size(), d});
}

Tensor text_encode(const MoedParams& params, std::span<const int> ids, MoedTrace* trace) {
  expect_first(ids, Vocabulary::kCls, "[CLS]");
  return moed_forward(params, ids, SelfAttentionMask::bidirectional, {}, trace);
}

Tensor video_grounded_encode(const MoedParams& params, std::span<const int> ids, const Tensor& video,
                             MoedTrace* trace) {
  expect_first(ids, Vocabulary::kEncode, "[Encode]");
  if (!video.defined() || video.numel() == 0) throw ParameterError("video-grounded encoding needs a video");
  return moed_forward(params, ids, SelfAttentionMask::bidirectional, video, trace);
}

Tensor video_grounded_decode(const MoedParams& params, std::span<const int> ids, const Tensor& video,
                             MoedTrace* trace) {
  expect_first(ids, Vocabulary::kDecode, "[Decode]");
  if (!video.defined() || video.numel() == 0) throw ParameterError("video-grounded decoding needs a video");
  return params.lm_head(moed_forward(params, ids, SelfAttentionMask::causal, video, trace));
}

Tensor flatten_video(const SegmentedVideoEmbedding& video) {
  const auto& s = video.values.shape();
  if (s.size() != 3) throw ShapeError("segmented video must be [S, T, d], got " + shape_string(s));
  return reshape(video.values, {s[0] * s[1], s[2]});
}

IncrementalDecoder::IncrementalDecoder(const MoedParams& params, const Tensor& memory) : params_(&params) {
  if (!memory.defined() || memory.numel() == 0) throw ParameterError("decoder needs a non-empty memory");
  NoGradGuard guard;
  const Tensor mem = as_memory(memory, params.hidden());
  auto cross = std::make_shared<std::vector<KeyValue>>();
  for (const auto& layer : params.layers) cross->push_back(layer.cross_attn.project(mem));
  cross_ = std::move(cross);
  self_.resize(params.layers.size());
}

std::vector<double> IncrementalDecoder::push(int token) {
  const int ids[1] = {token};
  check_ids(*params_, ids);
  if (length_ >= params_->max_len) throw TokenizationError("decoder reached max_len");
  NoGradGuard guard;
  Tensor x = embed(*params_, ids, length_);
  for (std::size_t l = 0; l < params_->layers.size(); ++l) {
    const auto& layer = params_->layers[l];
    const Tensor h = layer.ln_self(x);
    KeyValue step = layer.self_attn.project(h);
    auto& cache = self_[l];
    if (cache.keys.defined()) {
      cache.keys = concat({cache.keys, step.keys}, 2);
      cache.values = concat({cache.values, step.values}, 2);
    } else {
      cache = std::move(step);
    }
    x = add(x, layer.self_attn.attend(h, cache));
    x = add(x, layer.cross_attn.attend(layer.ln_cross(x), (*cross_)[l]));
    x = add(x, layer.ffn(layer.ln_ffn(x)));
  }
  ++length_;
  const Tensor logits = params_->lm_head(params_->final_ln(x));
  const auto v = logits.data();
  return {v.begin(), v.end()};
}

}  // namespace rtq
