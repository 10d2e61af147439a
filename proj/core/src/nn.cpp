#include "rtq/nn.hpp"

#include <cmath>

#include "rtq/error.hpp"

namespace rtq {

ParamList clone_params(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone()});
  return out;
}

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng, double stddev) {
  return {Tensor::randn({in, out}, rng, stddev, true), Tensor::zeros({out}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear Linear::deep_copy() const { return {weight.clone(), bias.clone()}; }

LayerNorm LayerNorm::init(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true), 1e-5};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::deep_copy() const { return {gain.clone(), bias.clone(), eps}; }

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[2] % heads != 0) {
    throw ShapeError("split_heads expects [B,T,d] with d divisible by " + std::to_string(heads) + ", got " +
                     shape_string(s));
  }
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("merge_heads expects [B,h,T,dh], got " + shape_string(s));
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Tensor causal_mask(std::size_t length) {
  std::vector<double> m(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) m[i * length + j] = kMaskedLogit;
  }
  return Tensor::from({length, length}, std::move(m));
}

MultiHeadAttention MultiHeadAttention::init(std::size_t d, std::size_t heads, std::mt19937_64& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ParameterError("hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  MultiHeadAttention a;
  a.query = Linear::init(d, d, rng, sd);
  a.key = Linear::init(d, d, rng, sd);
  a.value = Linear::init(d, d, rng, sd);
  a.output = Linear::init(d, d, rng, sd);
  a.heads = heads;
  return a;
}

KeyValue MultiHeadAttention::project(const Tensor& xkv) const {
  return {split_heads(key(xkv), heads), split_heads(value(xkv), heads)};
}

Tensor MultiHeadAttention::attend(const Tensor& xq, const KeyValue& kv, const Tensor& mask, Tensor* probs) const {
  const Tensor q = split_heads(query(xq), heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.shape()[3]));
  Tensor scores = scale(matmul(q, transpose(kv.keys)), inv);
  if (mask.defined()) scores = add(scores, mask);
  Tensor p = softmax(scores, -1);
  if (probs) *probs = p;
  return output(merge_heads(matmul(p, kv.values)));
}

Tensor MultiHeadAttention::operator()(const Tensor& xq, const Tensor& xkv, const Tensor& mask, Tensor* probs) const {
  return attend(xq, project(xkv), mask, probs);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

MultiHeadAttention MultiHeadAttention::deep_copy() const {
  return {query.deep_copy(), key.deep_copy(), value.deep_copy(), output.deep_copy(), heads};
}

FeedForward FeedForward::init(std::size_t d, std::size_t hidden, std::mt19937_64& rng) {
  return {Linear::init(d, hidden, rng, 1.0 / std::sqrt(static_cast<double>(d))),
          Linear::init(hidden, d, rng, 1.0 / std::sqrt(static_cast<double>(hidden)))};
}

Tensor FeedForward::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

FeedForward FeedForward::deep_copy() const { return {fc1.deep_copy(), fc2.deep_copy()}; }

}  // namespace rtq
