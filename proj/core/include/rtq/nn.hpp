#pragma once

#include <random>
#include <string>
#include <vector>

#include "rtq/ops.hpp"
#include "rtq/tensor.hpp"

namespace rtq {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// Fresh leaves holding copies of every parameter (same names, same order).
ParamList clone_params(const ParamList& params);

/// Additive mask value; exp(kMaskedLogit - max) is exactly zero in float64.
inline constexpr double kMaskedLogit = -1e30;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng, double stddev);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  Linear deep_copy() const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNorm init(std::size_t d);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  LayerNorm deep_copy() const;
};

/// Projected keys/values, laid out [B, heads, T, head_dim].
struct KeyValue {
  Tensor keys;
  Tensor values;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t d, std::size_t heads, std::mt19937_64& rng);

  /// xq: [B, Tq, d], xkv: [B, Tk, d]. `mask` is additive, shape [Tq, Tk]
  /// (broadcast over batch and heads) or undefined. When `probs` is given it
  /// receives the attention weights [B, heads, Tq, Tk].
  Tensor operator()(const Tensor& xq, const Tensor& xkv, const Tensor& mask = {},
                    Tensor* probs = nullptr) const;

  KeyValue project(const Tensor& xkv) const;
  Tensor attend(const Tensor& xq, const KeyValue& kv, const Tensor& mask = {}, Tensor* probs = nullptr) const;

  void collect(const std::string& prefix, ParamList& out) const;
  MultiHeadAttention deep_copy() const;
};

struct FeedForward {
  Linear fc1, fc2;

  static FeedForward init(std::size_t d, std::size_t hidden, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  FeedForward deep_copy() const;
};

/// Splits [B, T, d] into [B, heads, T, d/heads].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// Inverse of split_heads.
Tensor merge_heads(const Tensor& x);

/// [T, T] additive mask with kMaskedLogit above the diagonal.
Tensor causal_mask(std::size_t length);

}  // namespace rtq
