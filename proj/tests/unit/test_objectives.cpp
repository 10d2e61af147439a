#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "loss_oracles.hpp"
#include "rtq/error.hpp"
#include "rtq/objectives.hpp"
#include "rtq/ops.hpp"

using namespace rtq;

namespace {

Tensor unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return l2_normalize(Tensor::randn({n, d}, rng), -1);
}

testing::Matrix rows_of(const Tensor& t) {
  testing::Matrix out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t.at({i, j});
  }
  return out;
}

Tensor scalar(double v) { return Tensor::from({1}, {v}); }

}  // namespace

TEST_CASE("single pair in a bank of one gives zero loss") {
  MemoryBank bank(1, 2);
  const Tensor v = Tensor::from({1, 2}, {1.0, 0.0}), t = Tensor::from({1, 2}, {0.0, 1.0});
  const std::vector<std::int64_t> ids{7};
  bank.push_batch(v, t, ids);
  const auto loss = vtc_loss({v, t, ids, {}, {}}, bank, scalar(1.0), 0.0);
  CHECK(loss.total.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("two orthogonal pairs") {
  MemoryBank bank(2, 2);
  const Tensor v = Tensor::from({2, 2}, {1, 0, 0, 1});
  const std::vector<std::int64_t> ids{0, 1};
  bank.push_batch(v, v, ids);
  const auto loss = vtc_loss({v, v, ids, {}, {}}, bank, scalar(1.0), 0.0);
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(loss.t2v.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(loss.total.item() == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("contrastive loss matches direct summation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 6;
    MemoryBank bank(32, d);
    // Older entries with repeated ids so positive sets have several members.
    for (std::size_t i = 0; i < 40; ++i) {
      bank.push_batch(unit_rows(1, d, rng), unit_rows(1, d, rng), std::vector<std::int64_t>{std::int64_t(i % 12)});
    }
    const Tensor v = unit_rows(8, d, rng), t = unit_rows(8, d, rng);
    const Tensor vm = unit_rows(8, d, rng), tm = unit_rows(8, d, rng);
    std::vector<std::int64_t> ids(8);
    for (std::size_t i = 0; i < 8; ++i) ids[i] = static_cast<std::int64_t>(i * 3 % 10);
    bank.push_batch(vm, tm, ids);
    const double tau = 0.05 + 0.05 * static_cast<double>(seed);
    const auto bank_ids = bank.ids();
    for (double w : {0.0, 0.4}) {
      const auto loss = vtc_loss({v, t, ids, vm, tm}, bank, scalar(tau), w);
      const double t2v = testing::vtc_direction(rows_of(t), rows_of(bank.videos()), ids, bank_ids, tau, w, rows_of(tm));
      const double v2t = testing::vtc_direction(rows_of(v), rows_of(bank.texts()), ids, bank_ids, tau, w, rows_of(vm));
      CHECK(std::abs(loss.t2v.item() - t2v) < 1e-9);
      CHECK(std::abs(loss.v2t.item() - v2t) < 1e-9);
      CHECK(std::abs(loss.total.item() - 0.5 * (t2v + v2t)) < 1e-9);
      CHECK(loss.total.item() >= 0.0);
    }
  }
}

TEST_CASE("contrastive gradient check") {
  std::mt19937_64 rng(3);
  MemoryBank bank(16, 4);
  for (std::size_t i = 0; i < 12; ++i) {
    bank.push_batch(unit_rows(1, 4, rng), unit_rows(1, 4, rng), std::vector<std::int64_t>{std::int64_t(i % 5)});
  }
  Tensor rv = Tensor::randn({4, 4}, rng, 1.0, true), rt = Tensor::randn({4, 4}, rng, 1.0, true);
  const std::vector<std::int64_t> ids{0, 1, 2, 3};
  const Tensor vm = unit_rows(4, 4, rng), tm = unit_rows(4, 4, rng);
  bank.push_batch(vm, tm, ids);
  Tensor log_tau = Tensor::from({1}, {std::log(0.2)}, true);
  auto loss = [&](double w) {
    return [&, w] {
      return vtc_loss({l2_normalize(rv, -1), l2_normalize(rt, -1), ids, vm, tm}, bank, exp(log_tau), w).total;
    };
  };
  CHECK(testing::grad_check(loss(0.0), {rv, rt, log_tau}).max_rel_error < 1e-6);
  // Soft labels are constants, so the temperature is excluded once they are on.
  CHECK(testing::grad_check(loss(0.4), {rv, rt}).max_rel_error < 1e-6);
}

TEST_CASE("swapping modalities swaps directions") {
  std::mt19937_64 rng(5);
  MemoryBank a(16, 5), b(16, 5);
  const Tensor bv = unit_rows(10, 5, rng), bt = unit_rows(10, 5, rng);
  std::vector<std::int64_t> bank_ids(10);
  for (std::size_t i = 0; i < 10; ++i) bank_ids[i] = static_cast<std::int64_t>(i % 4);
  a.push_batch(bv, bt, bank_ids);
  b.push_batch(bt, bv, bank_ids);
  const Tensor v = unit_rows(3, 5, rng), t = unit_rows(3, 5, rng);
  const std::vector<std::int64_t> ids{0, 1, 3};
  const auto x = vtc_loss({v, t, ids, {}, {}}, a, scalar(0.1), 0.0);
  const auto y = vtc_loss({t, v, ids, {}, {}}, b, scalar(0.1), 0.0);
  CHECK(x.t2v.item() == y.v2t.item());
  CHECK(x.v2t.item() == y.t2v.item());
}

TEST_CASE("contrastive contract errors") {
  MemoryBank bank(4, 2);
  const Tensor v = Tensor::from({1, 2}, {1.0, 0.0});
  CHECK_THROWS_AS(vtc_loss({v, v, {1}, {}, {}}, bank, scalar(1.0), 0.0), ContractError);
  bank.push_batch(v, v, std::vector<std::int64_t>{1});
  CHECK_THROWS_AS(vtc_loss({v, v, {2}, {}, {}}, bank, scalar(1.0), 0.0), ContractError);
  CHECK_THROWS_AS(vtc_loss({v, v, {1}, {}, {}}, bank, scalar(1.0), 0.4), ContractError);
  CHECK_THROWS_AS(vtc_loss({v, v, {1}, {}, {}}, bank, scalar(1.0), 1.5), ParameterError);
  const std::vector<double> not_unit{2.0, 0.0}, wrong_dim{1.0};
  CHECK_THROWS_AS(bank.push(not_unit, not_unit, 0), ContractError);
  CHECK_THROWS_AS(bank.push(wrong_dim, wrong_dim, 0), ContractError);
}

TEST_CASE("bank evicts oldest first") {
  MemoryBank bank(3, 2);
  for (std::int64_t i = 0; i < 4; ++i) {
    const double a = 0.3 * static_cast<double>(i);
    const std::vector<double> v{std::cos(a), std::sin(a)};
    bank.push(v, v, i);
  }
  CHECK(bank.size() == 3);
  CHECK(bank.ids() == std::vector<std::int64_t>{1, 2, 3});
  CHECK(bank.videos().at({0, 0}) == doctest::Approx(std::cos(0.3)).epsilon(1e-15));
  CHECK(bank.texts().at({2, 1}) == doctest::Approx(std::sin(0.9)).epsilon(1e-15));
  bank.clear();
  CHECK(bank.empty());
  CHECK_THROWS_AS(bank.videos(), ContractError);
}

TEST_CASE("matching loss closed forms") {
  const Tensor half = Tensor::from({1}, {0.5});
  CHECK(vtm_loss(half, half, half).item() == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
  const double eps = 1e-9;
  CHECK(vtm_loss(Tensor::from({1}, {1.0 - eps}), Tensor::from({1}, {eps}), Tensor::from({1}, {eps})).item() < 1e-6);
  // Exact 0 and 1 are clamped rather than producing infinities.
  const double clamped = vtm_loss(Tensor::from({1}, {0.0}), Tensor::from({1}, {1.0}), Tensor::from({1}, {1.0})).item();
  CHECK(clamped == doctest::Approx(-3.0 * std::log(1e-7)).epsilon(1e-9));
  CHECK_THROWS_AS(vtm_loss(half, Tensor::from({2}, {0.5, 0.5}), half), ShapeError);
}

TEST_CASE("matching loss gradient through sigmoid logits") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = Tensor::randn({5}, rng, 2.0, true), b = Tensor::randn({5}, rng, 2.0, true),
           c = Tensor::randn({5}, rng, 2.0, true);
    const auto r = testing::grad_check([&] { return vtm_loss(sigmoid(a), sigmoid(b), sigmoid(c)); }, {a, b, c});
    CHECK(r.max_rel_error < 1e-5);
    const auto val = vtm_loss(sigmoid(a), sigmoid(b), sigmoid(c)).item();
    std::vector<double> p, nv, nt;
    for (std::size_t i = 0; i < 5; ++i) {
      p.push_back(1.0 / (1.0 + std::exp(-a.data()[i])));
      nv.push_back(1.0 / (1.0 + std::exp(-b.data()[i])));
      nt.push_back(1.0 / (1.0 + std::exp(-c.data()[i])));
    }
    CHECK(std::abs(val - testing::vtm_oracle(p, nv, nt)) < 1e-12);
    CHECK(val >= 0.0);
  }
}

TEST_CASE("hard negative sampling") {
  std::mt19937_64 rng(11);
  const std::vector<double> sims{0.3, 0.9, -0.2};
  for (int i = 0; i < 100; ++i) CHECK(sample_hard_negative(sims, {false, true, false}, 0.1, rng) == 1);
  CHECK_THROWS_AS(sample_hard_negative(sims, {false, false, false}, 0.1, rng), SamplingError);
  CHECK_THROWS_AS(sample_hard_negative(sims, {true, true}, 0.1, rng), ShapeError);

  const std::size_t draws = 100000;
  {
    const std::vector<double> s{10.0, -10.0};
    std::size_t first = 0;
    for (std::size_t i = 0; i < draws; ++i) first += sample_hard_negative(s, {true, true}, 1.0, rng) == 0;
    const double p = 1.0 / (1.0 + std::exp(-20.0));
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    CHECK(std::abs(static_cast<double>(first) - draws * p) <= std::max(3.0 * sigma, 1.0));
  }
  {
    const std::vector<double> s(4, 0.25);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < draws; ++i) ++counts[sample_hard_negative(s, std::vector<bool>(4, true), 0.07, rng)];
    const double p = 0.25, sigma = std::sqrt(draws * p * (1.0 - p));
    for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - draws * p) <= 3.0 * sigma);
  }
  {
    // Proportional to exp(s / tau) over valid entries.
    const std::vector<double> s{0.1, 0.5, 0.2, 0.4};
    const std::vector<bool> valid{true, true, false, true};
    const double tau = 0.2;
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < draws; ++i) ++counts[sample_hard_negative(s, valid, tau, rng)];
    CHECK(counts[2] == 0);
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) z += valid[k] ? std::exp(s[k] / tau) : 0.0;
    for (std::size_t k : {0u, 1u, 3u}) {
      const double p = std::exp(s[k] / tau) / z, sigma = std::sqrt(draws * p * (1.0 - p));
      CHECK(std::abs(static_cast<double>(counts[k]) - draws * p) <= 3.0 * sigma);
    }
  }
}

TEST_CASE("language-model loss closed forms") {
  const Tensor uniform = Tensor::zeros({3, 7});
  const std::vector<int> targets{1, 4, 6};
  for (double eps : {0.0, 0.1, 0.5}) {
    CHECK(lm_loss(uniform, targets, eps).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  }
  const std::vector<int> zero{0};
  CHECK(lm_loss(Tensor::from({1, 2}, {std::log(9.0), 0.0}), zero, 0.0, -1).item() ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-12));

  // Near one-hot prediction p = 1 - 1e-7 with eps = 0.1, V = 4.
  const double p = 1.0 - 1e-7, r = 1e-7 / 3.0;
  const std::vector<double> row{0.0, std::log(r / p), std::log(r / p), std::log(r / p)};
  const std::vector<int> hit{0};
  const double got = lm_loss(Tensor::from({1, 4}, row), hit, 0.1, -1).item();
  const double expected = -(0.9 * std::log(p) + 0.1 * std::log(r));
  CHECK(std::abs(got - expected) < 1e-9);
  CHECK(std::abs(got - testing::lm_oracle({row}, {0}, 0.1, -1)) < 1e-9);
}

TEST_CASE("language-model loss matches the oracle and skips padding") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t T = 6, V = 9;
    Tensor logits = Tensor::randn({T, V}, rng, 2.0, true);
    std::vector<int> targets(T);
    std::uniform_int_distribution<int> pick(0, V - 1);
    for (auto& y : targets) y = pick(rng);
    targets[0] = 3;
    const double got = lm_loss(logits, targets, 0.1).item();
    CHECK(std::abs(got - testing::lm_oracle(rows_of(logits), targets, 0.1)) < 1e-9);
    CHECK(got >= 0.0);
    const auto r = testing::grad_check([&] { return lm_loss(logits, targets, 0.1); }, {logits});
    CHECK(r.max_rel_error < 1e-6);
  }
  const std::vector<int> all_pad{0, 0};
  CHECK_THROWS_AS(lm_loss(Tensor::zeros({2, 3}), all_pad, 0.1), ContractError);
  const std::vector<int> bad{5};
  CHECK_THROWS_AS(lm_loss(Tensor::zeros({1, 3}), bad, 0.1), TokenizationError);
  CHECK_THROWS_AS(lm_loss(Tensor::zeros({2, 3}), bad, 0.1), ShapeError);
}

TEST_CASE("momentum update") {
  std::mt19937_64 rng(2);
  const Tensor on = Tensor::randn({3, 2}, rng), sh = Tensor::randn({3, 2}, rng);
  ParamList online{{"w", on}};
  {
    ParamList shadow{{"w", sh.clone()}};
    momentum_update(online, shadow, 1.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(shadow[0].tensor.data()[i] == sh.data()[i]);
    momentum_update(online, shadow, 0.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(shadow[0].tensor.data()[i] == on.data()[i]);
  }
  {
    ParamList shadow{{"w", sh.clone()}};
    for (int s = 0; s < 100; ++s) momentum_update(online, shadow, 0.995);
    const double decay = std::pow(0.995, 100);
    for (std::size_t i = 0; i < 6; ++i) {
      const double expected = on.data()[i] + decay * (sh.data()[i] - on.data()[i]);
      CHECK(shadow[0].tensor.data()[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  ParamList wrong{{"w", Tensor::zeros({2, 3})}};
  CHECK_THROWS_AS(momentum_update(online, wrong, 0.5), ShapeError);
  ParamList shadow{{"w", sh.clone()}};
  CHECK_THROWS_AS(momentum_update(online, shadow, 1.5), ParameterError);
}

TEST_CASE("contrastive head outputs unit rows and clamps temperature") {
  std::mt19937_64 rng(4);
  auto head = ContrastiveHead::init(6, 4, rng);
  const Tensor x = Tensor::randn({3, 6}, rng);
  const Tensor v = head.project_video(x);
  for (std::size_t i = 0; i < 3; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < 4; ++j) n += v.at({i, j}) * v.at({i, j});
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(head.temperature().item() == doctest::Approx(0.07).epsilon(1e-12));
  head.log_tau.mutable_data()[0] = 5.0;
  CHECK(head.temperature().item() == doctest::Approx(0.5).epsilon(1e-12));
  head.log_tau.mutable_data()[0] = -50.0;
  CHECK(head.temperature().item() == doctest::Approx(0.001).epsilon(1e-12));
  CHECK_THROWS_AS(ContrastiveHead::init(6, 4, rng, 0.9), ParameterError);
}
