#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rtq/nn.hpp"
#include "rtq/refinement.hpp"

namespace rtq {

struct EncoderConfig {
  std::size_t layers = 4;         // L
  std::size_t cluster_after = 2;  // K, plain layers before refinement
  std::size_t hidden = 64;        // d
  std::size_t heads = 4;
  std::size_t frames = 4;   // F
  std::size_t segments = 2; // S
  std::size_t patches_out = 16;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t mlp_ratio = 4;
  /// false removes the message-token self-attention (plain per-segment layers).
  bool message_tokens = true;
  ClusteringOptions clustering;
  std::uint64_t cluster_seed = 0;

  std::size_t patches_in() const;
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  /// Throws ParameterError on any structural violation.
  void validate() const;
  /// Non-fatal advice (e.g. clustering placed in shallow layers).
  std::vector<std::string> warnings() const;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + FFN(LN(.)).
struct VitLayerParams {
  LayerNorm ln_attn;
  MultiHeadAttention attn;
  LayerNorm ln_mlp;
  FeedForward mlp;

  static VitLayerParams init(std::size_t d, std::size_t heads, std::size_t mlp_hidden, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  VitLayerParams deep_copy() const;
};

/// Self-attention over the S segment [CLS] tokens. The output projection
/// starts at zero so the block is an exact residual identity at init.
struct MessageTokenBlock {
  MultiHeadAttention attn;

  static MessageTokenBlock init(std::size_t d, std::size_t heads, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  MessageTokenBlock deep_copy() const;
};

struct VideoEncoderParams {
  Linear patch_embed;     // patch_dim -> d
  Tensor cls_token;       // [d]
  Tensor spatial_pos;     // [1 + P_in, d]
  Tensor temporal_pos;    // [F, d]
  std::vector<VitLayerParams> layers;       // L
  std::vector<MessageTokenBlock> messages;  // L - K
  LayerNorm final_ln;

  static VideoEncoderParams init(const EncoderConfig& config, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  VideoEncoderParams deep_copy() const;
};

Tensor vit_layer_forward(const Tensor& x, const VitLayerParams& layer);

/// m = m_hat + SA(m_hat) over the [1, S, d] stack of segment [CLS] tokens.
Tensor message_token_update(const Tensor& cls_tokens, const MessageTokenBlock& block);

/// One ViT-ATM layer over [S, 1 + P_out, d]: the segment [CLS] tokens are
/// exchanged through the message block, written back to slot 0, and every
/// segment then runs the ordinary layer on its own tokens. A null block
/// gives the plain per-segment layer.
Tensor vit_atm_forward(const Tensor& segments, const VitLayerParams& layer, const MessageTokenBlock* block);

/// [F, C, H, W] pixels -> [F, P_in, C * p * p] patch vectors (row-major patches,
/// channel-major within a patch). Throws ParameterError if H or W is not a
/// multiple of the patch size.
Tensor patchify(const Tensor& pixels, std::size_t patch_size);

/// Frame embeddings before refinement: patch embed, per-frame [CLS], spatial
/// and temporal position embeddings, then K plain layers. [F, 1 + P_in, d].
Tensor encode_frames(const Tensor& pixels, const EncoderConfig& config, const VideoEncoderParams& params);

/// Full video encoder: encode_frames -> refine -> (L - K) ViT-ATM layers -> LN.
SegmentedVideoEmbedding encode_video(const Tensor& pixels, const EncoderConfig& config,
                                     const VideoEncoderParams& params);

}  // namespace rtq
