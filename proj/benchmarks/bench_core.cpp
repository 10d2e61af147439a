#include <benchmark/benchmark.h>

#include <random>

#include "rtq/model.hpp"
#include "rtq/ops.hpp"
#include "rtq/refinement.hpp"
#include "rtq/temporal.hpp"

using namespace rtq;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::randn({n, n}, rng), b = Tensor::randn({n, n}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_AttentionBackward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const auto attn = MultiHeadAttention::init(64, 4, rng);
  Tensor x = Tensor::randn({2, tokens, 64}, rng, 1.0, true);
  for (auto _ : state) {
    backward(sum(attn(x, x, {}, nullptr)));
    x.zero_grad();
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(17)->Arg(65);

static void BM_KMedoids(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const Tensor pts = Tensor::randn({n, 64}, rng);
  const std::size_t k = n / 2;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(kmedoidspp_cluster(pts, k, seed++).cost);
}
BENCHMARK(BM_KMedoids)->Arg(34)->Arg(128)->Arg(394);

static void BM_EncodeVideo(benchmark::State& state) {
  EncoderConfig c;
  c.message_tokens = state.range(0) != 0;
  std::mt19937_64 rng(4);
  const auto params = VideoEncoderParams::init(c, rng);
  const Tensor pixels = Tensor::randn({c.frames, 3, c.image_size, c.image_size}, rng, 0.3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(encode_video(pixels, c, params).values);
}
BENCHMARK(BM_EncodeVideo)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
