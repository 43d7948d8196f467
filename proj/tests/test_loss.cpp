#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "octseg/loss.hpp"
#include "oracles.hpp"

using namespace octseg;

namespace {

struct Case {
  Tensor<double> logits;
  Tensor<double> targets;
};

Case random_case(std::uint64_t seed, Shape shape = {2, 1, 4, 4}, double scale = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, scale);
  std::bernoulli_distribution y(0.3);
  Case c{Tensor<double>(shape), Tensor<double>(shape)};
  for (auto& v : c.logits.values()) v = z(rng);
  for (auto& v : c.targets.values()) v = y(rng) ? 1.0 : 0.0;
  return c;
}

double oracle_bce(const Case& c) {
  double s = 0;
  for (std::size_t i = 0; i < c.logits.size(); ++i) s += oracle::bce_pixel(c.logits[i], c.targets[i]);
  return s / static_cast<double>(c.logits.size());
}

double oracle_dice(const Case& c, double eps = 1.0) {
  double inter = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < c.logits.size(); ++i) {
    const double p = oracle::logistic(c.logits[i]);
    inter += p * c.targets[i];
    sp += p;
    sy += c.targets[i];
  }
  return 1.0 - (2 * inter + eps) / (sp + sy + eps);
}

Tensor<double> probs_of(const Tensor<double>& logits) {
  Tensor<double> p(logits.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = oracle::logistic(logits[i]);
  return p;
}

}  // namespace

TEST_CASE("presets") {
  const std::vector<std::pair<double, double>> expected{{1, 0}, {0, 1}, {0.5, 0.5}, {0.7, 0.3}, {0.3, 0.7}};
  for (int id = 1; id <= 5; ++id) {
    const auto p = LossConfig::preset(id);
    CHECK(p.id == id);
    CHECK(p.w_bce == expected[static_cast<std::size_t>(id - 1)].first);
    CHECK(p.w_dice == expected[static_cast<std::size_t>(id - 1)].second);
    CHECK(p.dice_smooth == 1.0);
  }
  CHECK_THROWS_AS(LossConfig::preset(0), ConfigError);
  CHECK_THROWS_AS(LossConfig::preset(6), ConfigError);
}

TEST_CASE("bce_loss") {
  SUBCASE("zero logits give ln 2") {
    for (std::uint64_t seed : {1u, 2u}) {
      auto c = random_case(seed);
      for (auto& v : c.logits.values()) v = 0.0;
      CHECK(std::abs(bce_loss(c.logits, c.targets) - std::log(2.0)) <= 1e-12);
    }
  }
  SUBCASE("saturated correct logits") {
    auto c = random_case(3);
    for (std::size_t i = 0; i < c.logits.size(); ++i) c.logits[i] = c.targets[i] > 0.5 ? 50.0 : -50.0;
    CHECK(bce_loss(c.logits, c.targets) < 1e-9);
  }
  SUBCASE("matches a per-pixel scalar evaluation") {
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
      const auto c = random_case(seed);
      CHECK(bce_loss(c.logits, c.targets) == doctest::Approx(oracle_bce(c)).epsilon(1e-12));
    }
  }
  SUBCASE("finite for extreme logits") {
    Tensor<double> z({1, 1, 1, 2}, std::vector<double>{1e4, -1e4});
    Tensor<double> y({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    const double l = bce_loss(z, y);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(1e4));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(bce_loss(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 2, 3})), ShapeError);
  }
  SUBCASE("raising a positive logit never increases the loss") {
    auto c = random_case(21);
    double prev = bce_loss(c.logits, c.targets);
    std::size_t pos = 0;
    while (c.targets[pos] < 0.5) ++pos;
    for (int step = 0; step < 20; ++step) {
      c.logits[pos] += 0.5;
      const double cur = bce_loss(c.logits, c.targets);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("dice_loss") {
  SUBCASE("perfect binary prediction") {
    Tensor<double> y({1, 1, 4, 4});
    for (std::size_t i = 0; i < 5; ++i) y[i] = 1.0;
    CHECK(dice_loss(y, y) == 0.0);
  }
  SUBCASE("zero prediction against N positives") {
    for (int n : {1, 7, 64}) {
      Tensor<double> y({1, 1, 8, 8});
      for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = 1.0;
      CHECK(std::abs(dice_loss(Tensor<double>({1, 1, 8, 8}), y) - (1.0 - 1.0 / (n + 1))) <= 1e-12);
    }
  }
  SUBCASE("half probabilities over 64 pixels, 32 positives") {
    Tensor<double> p({1, 1, 8, 8}, 0.5);
    Tensor<double> y({1, 1, 8, 8});
    for (std::size_t i = 0; i < 32; ++i) y[i] = 1.0;
    // Direct sums: 2*16 + 1 over 32 + 32 + 1.
    CHECK(std::abs(dice_loss(p, y) - (1.0 - 33.0 / 65.0)) <= 1e-12);
  }
  SUBCASE("bounded in [0, 1)") {
    for (std::uint64_t seed = 30; seed < 40; ++seed) {
      const auto c = random_case(seed);
      const double d = dice_loss(probs_of(c.logits), c.targets);
      CHECK(d >= 0.0);
      CHECK(d < 1.0);
      CHECK(d == doctest::Approx(oracle_dice(c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("combined_loss") {
  SUBCASE("preset 1 is BCE, preset 2 is Dice") {
    for (std::uint64_t seed = 40; seed < 50; ++seed) {
      const auto c = random_case(seed);
      CHECK(combined_loss(LossConfig::preset(1), c.logits, c.targets) == bce_loss(c.logits, c.targets));
      CHECK(std::abs(combined_loss(LossConfig::preset(2), c.logits, c.targets) -
                     dice_loss(probs_of(c.logits), c.targets)) <= 1e-12);
    }
  }
  SUBCASE("weighted presets recombine independently computed terms") {
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
      const auto c = random_case(seed);
      const double bce = oracle_bce(c), dice = oracle_dice(c);
      CHECK(std::abs(combined_loss(LossConfig::preset(3), c.logits, c.targets) - (0.5 * bce + 0.5 * dice)) <= 1e-7);
      CHECK(std::abs(combined_loss(LossConfig::preset(4), c.logits, c.targets) - (0.7 * bce + 0.3 * dice)) <= 1e-7);
      CHECK(std::abs(combined_loss(LossConfig::preset(5), c.logits, c.targets) - (0.3 * bce + 0.7 * dice)) <= 1e-7);
    }
  }
  SUBCASE("stipulated sub-values") {
    const auto p = LossConfig::preset(4);
    CHECK(p.w_bce * 0.4 + p.w_dice * 0.2 == doctest::Approx(0.34));
  }
  SUBCASE("saturating toward the targets drives every preset to zero") {
    auto c = random_case(61);
    for (std::size_t i = 0; i < c.logits.size(); ++i) c.logits[i] = c.targets[i] > 0.5 ? 40.0 : -40.0;
    for (int id = 1; id <= 5; ++id) CHECK(combined_loss(LossConfig::preset(id), c.logits, c.targets) < 1e-12);
  }
  SUBCASE("float and double agree") {
    const auto c = random_case(62, {2, 1, 16, 16});
    const auto lf = c.logits.cast<float>();
    const auto tf = c.targets.cast<float>();
    for (int id = 1; id <= 5; ++id)
      CHECK(combined_loss(LossConfig::preset(id), lf, tf) ==
            doctest::Approx(combined_loss(LossConfig::preset(id), c.logits, c.targets)).epsilon(1e-6));
  }
}

TEST_CASE("loss gradients match central differences") {
  for (int id = 1; id <= 5; ++id) {
    const auto cfg = LossConfig::preset(id);
    auto c = random_case(70 + static_cast<std::uint64_t>(id), {2, 1, 4, 4}, 2.0);
    std::vector<double> grad(c.logits.size());
    const double value = combined_loss_with_grad<double>(cfg, c.logits.values(), c.targets.values(), grad);
    CHECK(value == doctest::Approx(combined_loss(cfg, c.logits, c.targets)).epsilon(1e-14));
    for (std::size_t i = 0; i < c.logits.size(); ++i) {
      const double saved = c.logits[i];
      const double h = 1e-3;
      c.logits[i] = saved + h;
      const double up = combined_loss(cfg, c.logits, c.targets);
      c.logits[i] = saved - h;
      const double down = combined_loss(cfg, c.logits, c.targets);
      c.logits[i] = saved;
      const double numeric = (up - down) / (2 * h);
      CHECK(std::abs(grad[i] - numeric) <= 1e-3 * std::max({std::abs(grad[i]), std::abs(numeric), 1e-6}));
    }
  }
}
