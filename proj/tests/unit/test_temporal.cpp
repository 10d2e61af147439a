#include <doctest.h>

#include "gradcheck.hpp"
#include "rtq/error.hpp"
#include "rtq/ops.hpp"
#include "rtq/temporal.hpp"

using namespace rtq;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.layers = 3;
  c.cluster_after = 1;
  c.hidden = 8;
  c.heads = 2;
  c.frames = 4;
  c.segments = 2;
  c.image_size = 8;
  c.patch_size = 4;
  c.patches_out = 3;
  c.mlp_ratio = 2;
  return c;
}

ParamList params_of(const VideoEncoderParams& p) {
  ParamList out;
  p.collect("video", out);
  return out;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("layer with zero output projections is the identity") {
  std::mt19937_64 rng(1);
  VitLayerParams layer = VitLayerParams::init(8, 2, 16, rng);
  layer.attn.output = Linear::zeros(8, 8);
  layer.mlp.fc2 = Linear::zeros(16, 8);
  const Tensor x = Tensor::randn({2, 3, 8}, rng);
  CHECK(same_values(vit_layer_forward(x, layer), x));
}

TEST_CASE("single token attends to itself with weight 1") {
  std::mt19937_64 rng(2);
  const auto attn = MultiHeadAttention::init(8, 2, rng);
  const Tensor x = Tensor::randn({1, 1, 8}, rng);
  Tensor probs;
  attn(x, x, {}, &probs);
  for (double p : probs.data()) CHECK(p == 1.0);
}

TEST_CASE("layer gradient check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    VitLayerParams layer = VitLayerParams::init(8, 2, 16, rng);
    ParamList params;
    layer.collect("l", params);
    testing::randomize(params, rng);
    Tensor x = Tensor::randn({2, 3, 8}, rng, 1.0, true);
    const Tensor w = Tensor::randn({2, 3, 8}, rng);
    auto leaves = testing::tensors_of(params);
    leaves.push_back(x);
    const auto r = testing::grad_check([&] { return sum(mul(vit_layer_forward(x, layer), w)); }, leaves);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("ATM layer at initialization equals the per-segment layer") {
  std::mt19937_64 rng(3);
  const auto layer = VitLayerParams::init(8, 2, 16, rng);
  const auto block = MessageTokenBlock::init(8, 2, rng);
  const Tensor v = Tensor::randn({3, 5, 8}, rng);
  CHECK(same_values(vit_atm_forward(v, layer, &block), vit_atm_forward(v, layer, nullptr)));
  CHECK(same_values(vit_atm_forward(v, layer, nullptr), vit_layer_forward(v, layer)));
}

TEST_CASE("single segment message update is the value path") {
  std::mt19937_64 rng(4);
  auto block = MessageTokenBlock::init(8, 2, rng);
  block.attn.output = Linear::init(8, 8, rng, 0.5);
  const Tensor m = Tensor::randn({1, 1, 8}, rng);
  const Tensor out = message_token_update(m, block);
  const Tensor expected = add(m, block.attn.output(block.attn.value(m)));
  for (std::size_t i = 0; i < 8; ++i) CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("permuting segments permutes outputs") {
  std::mt19937_64 rng(5);
  const auto layer = VitLayerParams::init(8, 2, 16, rng);
  auto block = MessageTokenBlock::init(8, 2, rng);
  block.attn.output = Linear::init(8, 8, rng, 0.5);
  const Tensor v = Tensor::randn({3, 4, 8}, rng);
  const std::vector<std::size_t> perm{2, 0, 1};
  const Tensor a = vit_atm_forward(gather_rows(v, perm), layer, &block);
  const Tensor b = gather_rows(vit_atm_forward(v, layer, &block), perm);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("message exchange changes other segments only through slot 0") {
  std::mt19937_64 rng(6);
  const auto layer = VitLayerParams::init(8, 2, 16, rng);
  const auto block = MessageTokenBlock::init(8, 2, rng);
  const Tensor v = Tensor::randn({2, 4, 8}, rng);
  std::vector<double> zeroed(v.data().begin(), v.data().end());
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t c = 0; c < 8; ++c) zeroed[(4 + t) * 8 + c] = 0.0;
  }
  const Tensor a = vit_atm_forward(v, layer, &block);
  const Tensor b = vit_atm_forward(Tensor::from(v.shape(), zeroed), layer, &block);
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(a.at({0, t, c}) == b.at({0, t, c}));
  }
}

TEST_CASE("patchify layout") {
  std::vector<double> px(1 * 2 * 4 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i);
  const Tensor p = patchify(Tensor::from({1, 2, 4, 4}, px), 2);
  CHECK(p.shape() == Shape{1, 4, 8});
  // Patch 1 is the top-right 2x2 block: channel 0 rows 0-1, cols 2-3, then channel 1.
  const std::vector<double> expected{2, 3, 6, 7, 18, 19, 22, 23};
  for (std::size_t j = 0; j < 8; ++j) CHECK(p.at({0, 1, j}) == expected[j]);
  CHECK_THROWS_AS(patchify(Tensor::zeros({1, 2, 4, 4}), 3), ParameterError);
}

TEST_CASE("patchify passes gradients back to pixels") {
  std::mt19937_64 rng(9);
  Tensor px = Tensor::randn({2, 3, 4, 4}, rng, 1.0, true);
  const Tensor w = Tensor::randn({2, 4, 12}, rng);
  const auto r = testing::grad_check([&] { return sum(mul(patchify(px, 2), w)); }, {px});
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("toy encoder output shape") {
  EncoderConfig c;
  std::mt19937_64 rng(7);
  const auto params = VideoEncoderParams::init(c, rng);
  const Tensor pixels = Tensor::randn({4, 3, 32, 32}, rng, 0.3);
  const auto v = encode_video(pixels, c, params);
  CHECK(v.values.shape() == Shape{2, 17, 64});
  CHECK(c.patches_in() == 16);
  CHECK(c.warnings().empty());
}

TEST_CASE("config validation and advice") {
  EncoderConfig c = small_config();
  c.validate();
  c.cluster_after = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c.cluster_after = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.segments = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.image_size = 10;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_config();
  c.layers = 12;
  c.cluster_after = 5;
  CHECK(!c.warnings().empty());
  c.cluster_after = 8;
  CHECK(c.warnings().empty());
}

TEST_CASE("encoder at initialization equals the encoder without message tokens") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EncoderConfig c = small_config();
    std::mt19937_64 rng(seed);
    const auto params = VideoEncoderParams::init(c, rng);
    const Tensor pixels = Tensor::randn({4, 3, 8, 8}, rng, 0.5);
    const auto with = encode_video(pixels, c, params);
    c.message_tokens = false;
    const auto without = encode_video(pixels, c, params);
    CHECK(same_values(with.values, without.values));
  }
}

TEST_CASE("encoder gradient check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EncoderConfig c = small_config();
    c.frames = 2;
    c.segments = 1;
    std::mt19937_64 rng(seed);
    const auto params = VideoEncoderParams::init(c, rng);
    const ParamList list = params_of(params);
    testing::randomize(list, rng);
    const Tensor pixels = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
    const Tensor w = Tensor::randn({1, 4, 8}, rng);
    const auto r = testing::grad_check([&] { return sum(mul(encode_video(pixels, c, params).values, w)); },
                                       testing::tensors_of(list));
    INFO("seed " << seed);
    CHECK(r.max_rel_error < 1e-4);
  }
}
