#include "rtq/temporal.hpp"

#include <cmath>

#include "rtq/error.hpp"

namespace rtq {

std::size_t EncoderConfig::patches_in() const {
  if (patch_size == 0) return 0;
  const std::size_t side = image_size / patch_size;
  return side * side;
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError(msg); };
  if (layers < 2) fail("encoder needs at least 2 layers");
  if (cluster_after < 1 || cluster_after >= layers) {
    fail("cluster_after (K) must satisfy 1 <= K < L, got K=" + std::to_string(cluster_after) +
         ", L=" + std::to_string(layers));
  }
  if (heads == 0 || hidden % heads != 0) {
    fail("hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (frames == 0) fail("frame count must be positive");
  if (segments == 0 || frames % segments != 0) {
    fail("frames (" + std::to_string(frames) + ") must be divisible by segments (" + std::to_string(segments) + ")");
  }
  if (patch_size == 0 || image_size % patch_size != 0) {
    fail("image size " + std::to_string(image_size) + " not divisible by patch size " + std::to_string(patch_size));
  }
  if (channels == 0 || mlp_ratio == 0) fail("channels and mlp_ratio must be positive");
  const std::size_t pool = (frames / segments) * (1 + patches_in());
  if (1 + patches_out > pool) {
    fail("1 + P_out (" + std::to_string(1 + patches_out) + ") exceeds the " + std::to_string(pool) +
         " patches pooled per segment");
  }
}

std::vector<std::string> EncoderConfig::warnings() const {
  std::vector<std::string> out;
  if (2 * cluster_after < layers) {
    out.push_back("clustering after layer " + std::to_string(cluster_after) + " of " + std::to_string(layers) +
                  " works on shallow features; K near 2L/3 usually works best");
  }
  return out;
}

VitLayerParams VitLayerParams::init(std::size_t d, std::size_t heads, std::size_t mlp_hidden, std::mt19937_64& rng) {
  return {LayerNorm::init(d), MultiHeadAttention::init(d, heads, rng), LayerNorm::init(d),
          FeedForward::init(d, mlp_hidden, rng)};
}

void VitLayerParams::collect(const std::string& prefix, ParamList& out) const {
  ln_attn.collect(prefix + ".ln_attn", out);
  attn.collect(prefix + ".attn", out);
  ln_mlp.collect(prefix + ".ln_mlp", out);
  mlp.collect(prefix + ".mlp", out);
}

VitLayerParams VitLayerParams::deep_copy() const {
  return {ln_attn.deep_copy(), attn.deep_copy(), ln_mlp.deep_copy(), mlp.deep_copy()};
}

MessageTokenBlock MessageTokenBlock::init(std::size_t d, std::size_t heads, std::mt19937_64& rng) {
  MessageTokenBlock b{MultiHeadAttention::init(d, heads, rng)};
  b.attn.output = Linear::zeros(d, d);
  return b;
}

void MessageTokenBlock::collect(const std::string& prefix, ParamList& out) const { attn.collect(prefix + ".attn", out); }

MessageTokenBlock MessageTokenBlock::deep_copy() const { return {attn.deep_copy()}; }

VideoEncoderParams VideoEncoderParams::init(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.hidden;
  VideoEncoderParams p;
  p.patch_embed = Linear::init(config.patch_dim(), d, rng, 1.0 / std::sqrt(static_cast<double>(config.patch_dim())));
  p.cls_token = Tensor::randn({d}, rng, 0.02, true);
  p.spatial_pos = Tensor::randn({1 + config.patches_in(), d}, rng, 0.02, true);
  p.temporal_pos = Tensor::randn({config.frames, d}, rng, 0.02, true);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.layers.push_back(VitLayerParams::init(d, config.heads, d * config.mlp_ratio, rng));
  }
  for (std::size_t l = config.cluster_after; l < config.layers; ++l) {
    p.messages.push_back(MessageTokenBlock::init(d, config.heads, rng));
  }
  p.final_ln = LayerNorm::init(d);
  return p;
}

void VideoEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  patch_embed.collect(prefix + ".patch_embed", out);
  out.push_back({prefix + ".cls_token", cls_token});
  out.push_back({prefix + ".spatial_pos", spatial_pos});
  out.push_back({prefix + ".temporal_pos", temporal_pos});
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer" + std::to_string(l), out);
  for (std::size_t l = 0; l < messages.size(); ++l) {
    messages[l].collect(prefix + ".message" + std::to_string(l), out);
  }
  final_ln.collect(prefix + ".final_ln", out);
}

VideoEncoderParams VideoEncoderParams::deep_copy() const {
  VideoEncoderParams p;
  p.patch_embed = patch_embed.deep_copy();
  p.cls_token = cls_token.clone();
  p.spatial_pos = spatial_pos.clone();
  p.temporal_pos = temporal_pos.clone();
  for (const auto& l : layers) p.layers.push_back(l.deep_copy());
  for (const auto& m : messages) p.messages.push_back(m.deep_copy());
  p.final_ln = final_ln.deep_copy();
  return p;
}

Tensor vit_layer_forward(const Tensor& x, const VitLayerParams& layer) {
  const Tensor normed = layer.ln_attn(x);
  const Tensor h = add(x, layer.attn(normed, normed));
  return add(h, layer.mlp(layer.ln_mlp(h)));
}

Tensor message_token_update(const Tensor& cls_tokens, const MessageTokenBlock& block) {
  return add(cls_tokens, block.attn(cls_tokens, cls_tokens));
}

Tensor vit_atm_forward(const Tensor& segments, const VitLayerParams& layer, const MessageTokenBlock* block) {
  if (!block) return vit_layer_forward(segments, layer);
  const auto& s = segments.shape();
  if (s.size() != 3 || s[1] < 1) throw ShapeError("ViT-ATM expects [S, T, d], got " + shape_string(s));
  const std::size_t S = s[0], T = s[1], d = s[2];
  const Tensor cls = reshape(slice(segments, 1, 0, 1), {1, S, d});
  const Tensor messages = reshape(message_token_update(cls, *block), {S, 1, d});
  const Tensor merged = T > 1 ? concat({messages, slice(segments, 1, 1, T - 1)}, 1) : messages;
  return vit_layer_forward(merged, layer);
}

Tensor patchify(const Tensor& pixels, std::size_t patch_size) {
  const auto& s = pixels.shape();
  if (s.size() != 4) throw ParameterError("pixels must be [F, C, H, W], got " + shape_string(s));
  const std::size_t F = s[0], C = s[1], H = s[2], W = s[3];
  if (patch_size == 0 || H % patch_size != 0 || W % patch_size != 0) {
    throw ParameterError("frame " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch size " +
                         std::to_string(patch_size));
  }
  const std::size_t ph = H / patch_size, pw = W / patch_size;
  const std::size_t dim = C * patch_size * patch_size;
  std::vector<std::size_t> index(F * ph * pw * dim);
  std::size_t at = 0;
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t py = 0; py < ph; ++py) {
      for (std::size_t px = 0; px < pw; ++px) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t y = 0; y < patch_size; ++y) {
            const std::size_t row = ((f * C + c) * H + py * patch_size + y) * W + px * patch_size;
            for (std::size_t x = 0; x < patch_size; ++x) index[at++] = row + x;
          }
        }
      }
    }
  }
  const Tensor flat = gather_rows(reshape(pixels, {F * C * H * W, 1}), index);
  return reshape(flat, {F, ph * pw, dim});
}

Tensor encode_frames(const Tensor& pixels, const EncoderConfig& config, const VideoEncoderParams& params) {
  const auto& s = pixels.shape();
  if (s.size() != 4 || s[0] != config.frames || s[1] != config.channels || s[2] != config.image_size ||
      s[3] != config.image_size) {
    throw ParameterError("pixels " + shape_string(s) + " do not match encoder config");
  }
  const std::size_t F = config.frames, T = 1 + config.patches_in(), d = config.hidden;
  const Tensor patches = params.patch_embed(patchify(pixels, config.patch_size));  // [F, P_in, d]
  const Tensor cls = reshape(params.cls_token, {1, 1, d});
  const Tensor cls_rows = concat(std::vector<Tensor>(F, cls), 0);  // [F, 1, d]
  Tensor x = add(concat({cls_rows, patches}, 1), params.spatial_pos);
  std::vector<std::size_t> frame_of(F * T);
  for (std::size_t i = 0; i < frame_of.size(); ++i) frame_of[i] = i / T;
  x = add(x, reshape(gather_rows(params.temporal_pos, frame_of), {F, T, d}));
  for (std::size_t l = 0; l < config.cluster_after; ++l) x = vit_layer_forward(x, params.layers[l]);
  return x;
}

SegmentedVideoEmbedding encode_video(const Tensor& pixels, const EncoderConfig& config,
                                     const VideoEncoderParams& params) {
  const Tensor frames = encode_frames(pixels, config, params);
  SegmentedVideoEmbedding v =
      refine(frames, config.segments, config.patches_out, config.cluster_seed, config.clustering);
  for (std::size_t l = config.cluster_after; l < config.layers; ++l) {
    const MessageTokenBlock* block = config.message_tokens ? &params.messages[l - config.cluster_after] : nullptr;
    v.values = vit_atm_forward(v.values, params.layers[l], block);
  }
  v.values = params.final_ln(v.values);
  return v;
}

}  // namespace rtq
