#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "rtq/error.hpp"
#include "rtq/moed.hpp"
#include "rtq/ops.hpp"
#include "rtq/vocabulary.hpp"

using namespace rtq;

namespace {

constexpr int kV = 12;

MoedParams make_params(std::uint64_t seed, std::size_t max_len = 32) {
  MoedConfig c;
  c.vocab_size = kV;
  c.hidden = 8;
  c.heads = 2;
  c.layers = 2;
  c.max_len = max_len;
  c.mlp_ratio = 2;
  std::mt19937_64 rng(seed);
  MoedParams p = MoedParams::init(c, rng);
  ParamList list;
  p.collect("text", list);
  testing::randomize(list, rng, 0.4);
  return p;
}

Tensor random_memory(std::uint64_t seed, std::size_t rows = 6) {
  std::mt19937_64 rng(seed + 99);
  return Tensor::randn({rows, 8}, rng);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void check_rows_sum_to_one(const Tensor& probs) {
  const std::size_t last = probs.shape().back();
  for (std::size_t r = 0; r < probs.numel() / last; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < last; ++c) s += probs.data()[r * last + c];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

}  // namespace

TEST_CASE("vocabulary specials, encode and decode") {
  const Vocabulary v = Vocabulary::from_words({"red", "square", "a", "red"});
  CHECK(v.size() == 8);
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[CLS]") == 1);
  CHECK(v.id("[Encode]") == 2);
  CHECK(v.id("[Decode]") == 3);
  CHECK(v.id("[EOS]") == 4);
  CHECK(v.id("a") == 5);
  const auto ids = v.encode("a  red square");
  CHECK(ids == std::vector<int>{5, 6, 7});
  std::vector<int> with_specials{1, 5, 6, 4};
  CHECK(v.decode(with_specials) == "a red");
  CHECK_THROWS_AS(v.encode("a blue square"), TokenizationError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"x", "y"}), TokenizationError);
  const Vocabulary back = Vocabulary::from_tokens(v.tokens());
  CHECK(back.tokens() == v.tokens());
}

TEST_CASE("single [CLS] attends to itself") {
  const auto p = make_params(1);
  MoedTrace trace;
  const std::vector<int> ids{Vocabulary::kCls};
  const Tensor out = text_encode(p, ids, &trace);
  CHECK(out.shape() == Shape{1, 8});
  for (const auto& t : trace.self_probs) CHECK(t.data()[0] == 1.0);
  CHECK(trace.cross_probs.empty());
}

TEST_CASE("sequence prefixes are enforced") {
  const auto p = make_params(2);
  const Tensor mem = random_memory(2);
  const std::vector<int> wrong{Vocabulary::kEncode, 6};
  CHECK_THROWS_AS(text_encode(p, wrong), ContractError);
  const std::vector<int> cls{Vocabulary::kCls, 6};
  CHECK_THROWS_AS(video_grounded_encode(p, cls, mem), ContractError);
  CHECK_THROWS_AS(video_grounded_decode(p, cls, mem), ContractError);
  const std::vector<int> enc{Vocabulary::kEncode, 6};
  CHECK_THROWS_AS(video_grounded_encode(p, enc, Tensor{}), ParameterError);
  std::vector<int> long_seq(33, 6);
  long_seq[0] = Vocabulary::kCls;
  CHECK_THROWS_AS(text_encode(p, long_seq), TokenizationError);
  const std::vector<int> unknown{Vocabulary::kCls, kV};
  CHECK_THROWS_AS(text_encode(p, unknown), TokenizationError);
}

TEST_CASE("padding leaves the other outputs unchanged") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = make_params(seed);
    const Tensor mem = random_memory(seed);
    const std::vector<int> base{Vocabulary::kEncode, 6, 9, 7, 5};
    std::vector<int> padded = base;
    padded.insert(padded.end(), 4, Vocabulary::kPad);
    const Tensor a = video_grounded_encode(p, base, mem);
    const Tensor b = video_grounded_encode(p, padded, mem);
    CHECK(max_abs_diff(a.data(), b.data().subspan(0, a.numel())) < 1e-9);
    std::vector<int> tb = base, tp = padded;
    tb[0] = tp[0] = Vocabulary::kCls;
    const Tensor c = text_encode(p, tb), d = text_encode(p, tp);
    CHECK(max_abs_diff(c.data(), d.data().subspan(0, c.numel())) < 1e-9);
    tb[0] = tp[0] = Vocabulary::kDecode;
    const Tensor e = video_grounded_decode(p, tb, mem), f = video_grounded_decode(p, tp, mem);
    CHECK(max_abs_diff(e.data(), f.data().subspan(0, e.numel())) < 1e-9);
  }
}

TEST_CASE("text encoder is permutation equivariant without positions") {
  auto p = make_params(3);
  for (auto& v : p.position_embedding.mutable_data()) v = 0.0;
  const std::vector<int> a{Vocabulary::kCls, 6, 9, 7}, b{Vocabulary::kCls, 7, 9, 6};
  const Tensor x = text_encode(p, a), y = text_encode(p, b);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(x.at({1, c}) == doctest::Approx(y.at({3, c})).epsilon(1e-12));
    CHECK(x.at({3, c}) == doctest::Approx(y.at({1, c})).epsilon(1e-12));
    CHECK(x.at({0, c}) == doctest::Approx(y.at({0, c})).epsilon(1e-12));
  }
}

TEST_CASE("zeroed cross-attention output reduces grounded encoding to text encoding") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = make_params(seed);
    for (auto& layer : p.layers) layer.cross_attn.output = Linear::zeros(8, 8);
    auto table = p.token_embedding.mutable_data();
    for (std::size_t c = 0; c < 8; ++c) table[Vocabulary::kEncode * 8 + c] = table[Vocabulary::kCls * 8 + c];
    const std::vector<int> words{6, 8, 10};
    std::vector<int> cls{Vocabulary::kCls}, enc{Vocabulary::kEncode};
    cls.insert(cls.end(), words.begin(), words.end());
    enc.insert(enc.end(), words.begin(), words.end());
    const Tensor a = text_encode(p, cls);
    const Tensor b = video_grounded_encode(p, enc, random_memory(seed));
    CHECK(max_abs_diff(a.data(), b.data()) < 1e-9);
  }
}

TEST_CASE("attention rows sum to one in every attention kind") {
  const auto p = make_params(4);
  const Tensor mem = random_memory(4, 10);
  MoedTrace t1, t2, t3;
  const std::vector<int> cls{Vocabulary::kCls, 6, 7}, enc{Vocabulary::kEncode, 6, 7}, dec{Vocabulary::kDecode, 6, 7};
  text_encode(p, cls, &t1);
  video_grounded_encode(p, enc, mem, &t2);
  video_grounded_decode(p, dec, mem, &t3);
  for (auto* t : {&t1, &t2, &t3}) {
    for (const auto& x : t->self_probs) check_rows_sum_to_one(x);
    for (const auto& x : t->cross_probs) {
      CHECK(x.shape().back() == 10);
      check_rows_sum_to_one(x);
    }
  }
  // Causal rows put no weight on later tokens.
  for (const auto& x : t3.self_probs) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t q = 0; q < 3; ++q) {
        for (std::size_t k = q + 1; k < 3; ++k) CHECK(x.at({0, h, q, k}) == 0.0);
      }
    }
  }
}

TEST_CASE("causal probe at every position for max_len 32") {
  const auto p = make_params(5, 32);
  const Tensor mem = random_memory(5);
  std::mt19937_64 rng(5);
  std::vector<int> ids(32);
  ids[0] = Vocabulary::kDecode;
  for (std::size_t i = 1; i < 32; ++i) ids[i] = 5 + static_cast<int>(rng() % (kV - 5));
  const Tensor base = video_grounded_decode(p, ids, mem);
  for (std::size_t t = 0; t + 1 < 32; ++t) {
    auto changed = ids;
    changed[t + 1] = changed[t + 1] == 5 ? 6 : 5;
    const Tensor other = video_grounded_decode(p, changed, mem);
    const std::size_t upto = (t + 1) * kV;
    CHECK(max_abs_diff(base.data().subspan(0, upto), other.data().subspan(0, upto)) < 1e-9);
    double later = 0.0;
    for (std::size_t i = upto; i < other.numel(); ++i) later = std::max(later, std::abs(base.data()[i] - other.data()[i]));
    CHECK(later > 0.0);
  }
}

TEST_CASE("incremental decoding equals the teacher-forced pass") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = make_params(seed);
    const Tensor mem = random_memory(seed);
    const std::vector<int> ids{Vocabulary::kDecode, 6, 11, 7, 7, 9};
    const Tensor full = video_grounded_decode(p, ids, mem);
    IncrementalDecoder dec(p, mem);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto logits = dec.push(ids[t]);
      CHECK(max_abs_diff(logits, full.data().subspan(t * kV, kV)) < 1e-12);
    }
    CHECK(dec.length() == ids.size());
  }
  const auto p = make_params(9);
  const Tensor mem = random_memory(9);
  IncrementalDecoder a(p, mem);
  a.push(Vocabulary::kDecode);
  IncrementalDecoder b = a;
  const auto la = a.push(6);
  const auto lb = b.push(7);
  IncrementalDecoder c(p, mem);
  c.push(Vocabulary::kDecode);
  CHECK(max_abs_diff(c.push(7), lb) == 0.0);
  CHECK(max_abs_diff(la, lb) > 0.0);
}

TEST_CASE("[Decode] prefix logits depend on the video") {
  const auto p = make_params(6);
  const std::vector<int> ids{Vocabulary::kDecode};
  const Tensor a = video_grounded_decode(p, ids, random_memory(1));
  const Tensor b = video_grounded_decode(p, ids, random_memory(1));
  const Tensor c = video_grounded_decode(p, ids, random_memory(2));
  CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
  CHECK(max_abs_diff(a.data(), c.data()) > 0.0);
}

TEST_CASE("self-attention weights are shared across variants") {
  auto p = make_params(7);
  const Tensor mem = random_memory(7);
  const std::vector<int> cls{Vocabulary::kCls, 6, 7}, dec{Vocabulary::kDecode, 6, 7};
  const Tensor a0 = text_encode(p, cls), b0 = video_grounded_decode(p, dec, mem);
  auto w = p.layers[0].self_attn.value.weight.mutable_data();
  w[3] += 0.5;
  const Tensor a1 = text_encode(p, cls), b1 = video_grounded_decode(p, dec, mem);
  CHECK(max_abs_diff(a0.data(), a1.data()) > 0.0);
  CHECK(max_abs_diff(b0.data(), b1.data()) > 0.0);
  const MoedParams copy = p.deep_copy();
  w[3] += 0.5;
  CHECK(copy.layers[0].self_attn.value.weight.data()[3] != w[3]);
}

TEST_CASE("text stack gradient check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = make_params(seed);
    ParamList list;
    p.collect("text", list);
    Tensor mem = random_memory(seed);
    mem.set_requires_grad(true);
    const std::vector<int> ids{Vocabulary::kDecode, 6, 9, 0};
    std::mt19937_64 rng(seed + 5);
    const Tensor w = Tensor::randn({4, kV}, rng);
    auto leaves = testing::tensors_of(list);
    leaves.push_back(mem);
    const auto r = testing::grad_check([&] { return sum(mul(video_grounded_decode(p, ids, mem), w)); }, leaves);
    INFO("seed " << seed);
    CHECK(r.max_rel_error < 1e-4);
  }
}
