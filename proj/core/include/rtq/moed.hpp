#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rtq/nn.hpp"
#include "rtq/refinement.hpp"

namespace rtq {

struct MoedConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t max_len = 32;
  std::size_t mlp_ratio = 4;

  void validate() const;
};

/// One MoED layer. The self-attention weights serve both the bidirectional
/// and the causal variants; only the mask changes.
struct MoedLayer {
  LayerNorm ln_self;
  MultiHeadAttention self_attn;
  LayerNorm ln_cross;
  MultiHeadAttention cross_attn;
  LayerNorm ln_ffn;
  FeedForward ffn;

  void collect(const std::string& prefix, ParamList& out) const;
  MoedLayer deep_copy() const;
};

struct MoedParams {
  Tensor token_embedding;     // [V, d]
  Tensor position_embedding;  // [max_len, d]
  std::vector<MoedLayer> layers;
  LayerNorm final_ln;
  Linear lm_head;  // d -> V
  std::size_t max_len = 32;

  static MoedParams init(const MoedConfig& config, std::mt19937_64& rng);
  std::size_t hidden() const { return token_embedding.dim(1); }
  std::size_t vocab_size() const { return token_embedding.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
  MoedParams deep_copy() const;
};

enum class SelfAttentionMask { bidirectional, causal };

/// Attention weights captured during a forward pass, one entry per layer.
struct MoedTrace {
  std::vector<Tensor> self_probs;   // [1, heads, T, T]
  std::vector<Tensor> cross_probs;  // [1, heads, T, R]
};

/// Shared trunk. `memory` is [R, d] (or [1, R, d]); when undefined the
/// cross-attention sublayer is skipped. [PAD] keys are always masked.
/// Returns final hidden states [T, d].
Tensor moed_forward(const MoedParams& params, std::span<const int> ids, SelfAttentionMask mask,
                    const Tensor& memory, MoedTrace* trace = nullptr);

/// BiSA + FFN only. Sequence must start with [CLS]. [T, d].
Tensor text_encode(const MoedParams& params, std::span<const int> ids, MoedTrace* trace = nullptr);

/// BiSA -> cross-attention over `video` -> FFN. Sequence must start with
/// [Encode]; row 0 of the result is the multimodal embedding. [T, d].
Tensor video_grounded_encode(const MoedParams& params, std::span<const int> ids, const Tensor& video,
                             MoedTrace* trace = nullptr);

/// Causal SA -> cross-attention -> FFN -> LM head. Sequence must start with
/// [Decode]; row t holds the logits for token t + 1. [T, V].
Tensor video_grounded_decode(const MoedParams& params, std::span<const int> ids, const Tensor& video,
                             MoedTrace* trace = nullptr);

/// [S, 1 + P_out, d] -> [S * (1 + P_out), d].
Tensor flatten_video(const SegmentedVideoEmbedding& video);

/// Step-by-step decoder with cached keys and values. Copies share the
/// projected memory but own their self-attention caches.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const MoedParams& params, const Tensor& memory);

  /// Appends `token` and returns next-token logits (length V).
  std::vector<double> push(int token);
  std::size_t length() const { return length_; }

 private:
  const MoedParams* params_;
  std::shared_ptr<const std::vector<KeyValue>> cross_;
  std::vector<KeyValue> self_;
  std::size_t length_ = 0;
};

}  // namespace rtq
