#include <random>

#include "doctest.h"
#include "octseg/preprocess.hpp"

using namespace octseg;

namespace {

Tensor<float> random_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t({h, w});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("pad_width") {
  SUBCASE("700 -> 704 adds two fill columns per side") {
    const auto img = random_image(1024, 700, 1);
    const auto out = pad_width(img, 704, 0.0f);
    REQUIRE(out.shape() == Shape{1024, 704});
    for (std::int64_t y = 0; y < 1024; y += 97) {
      CHECK(out.at(y, 0) == 0.0f);
      CHECK(out.at(y, 1) == 0.0f);
      CHECK(out.at(y, 702) == 0.0f);
      CHECK(out.at(y, 703) == 0.0f);
      for (std::int64_t x = 0; x < 700; ++x) REQUIRE(out.at(y, x + 2) == img.at(y, x));
    }
  }
  SUBCASE("identity at the target width") {
    const auto img = random_image(8, 32, 2);
    CHECK(pad_width(img, 32, 0.0f) == img);
  }
  SUBCASE("odd padding splits floor left, ceil right") {
    const Tensor<float> ones({4, 3}, 1.0f);
    const auto out = pad_width(ones, 5, 0.0f);
    std::vector<float> sums(5, 0.0f);
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 5; ++x) sums[static_cast<std::size_t>(x)] += out.at(y, x);
    CHECK(sums == std::vector<float>{0, 4, 4, 4, 0});
    const auto wider = pad_width(ones, 6, 0.0f);
    CHECK(wider.at(0, 0) == 0.0f);
    CHECK(wider.at(0, 1) == 1.0f);
    CHECK(wider.at(0, 4) == 0.0f);
    CHECK(wider.at(0, 5) == 0.0f);
  }
  SUBCASE("never truncates") { CHECK_THROWS_AS(pad_width(random_image(4, 8, 3), 6, 0.0f), ShapeError); }
}

TEST_CASE("crop") {
  SUBCASE("1024x704 keeps the top 352 rows") {
    const auto img = random_image(1024, 704, 4);
    const TransformSpec spec;
    const auto out = crop(img, spec);
    REQUIRE(out.shape() == Shape{352, 704});
    for (std::int64_t y = 0; y < 352; y += 13)
      for (std::int64_t x = 0; x < 704; x += 7) REQUIRE(out.at(y, x) == img.at(y, x));
  }
  SUBCASE("4x4 ramp, 2x2 window") {
    Tensor<float> r({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) r[static_cast<std::size_t>(i)] = static_cast<float>(i);
    TransformSpec spec;
    spec.target_width = 4;
    spec.crop_height = 2;
    spec.crop_width = 2;
    // Direct index arithmetic: rows 0..1, centered columns 1..2.
    const auto out = crop(r, spec);
    REQUIRE(out.shape() == Shape{2, 2});
    CHECK(out.at(0, 0) == 1.0f);
    CHECK(out.at(0, 1) == 2.0f);
    CHECK(out.at(1, 0) == 5.0f);
    CHECK(out.at(1, 1) == 6.0f);
  }
  SUBCASE("identity when dims match") {
    const auto img = random_image(64, 96, 5);
    TransformSpec spec;
    spec.target_width = 96;
    spec.crop_height = 64;
    spec.crop_width = 96;
    CHECK(crop(img, spec) == img);
  }
  SUBCASE("out of bounds names the dimension") {
    TransformSpec spec;
    spec.crop_row_offset = 700;
    CHECK_THROWS_WITH_AS(crop(random_image(1024, 704, 6), spec), doctest::Contains("height"), ShapeError);
  }
}

TEST_CASE("TransformSpec validation") {
  TransformSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.crop_height = 350;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.crop_width = 736;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  CHECK_THROWS_AS(spec.validate_for(300, 700), ShapeError);
  CHECK_THROWS_AS(spec.validate_for(1024, 710), ShapeError);
}

TEST_CASE("apply_transform") {
  const TransformSpec spec;
  const auto img = random_image(1024, 700, 7);

  SUBCASE("image and mask both become 352x704") {
    Tensor<std::uint8_t> mask({1024, 700});
    const auto out = apply_transform(img, mask, spec);
    CHECK(out.image.shape() == Shape{352, 704});
    CHECK(out.mask.shape() == Shape{352, 704});
    CHECK(out.mask == Tensor<std::uint8_t>({352, 704}));
    CHECK(out.image.dim(0) % 32 == 0);
    CHECK(out.image.dim(1) % 32 == 0);
  }
  SUBCASE("single pixel maps to (r - offset, c + pad_left - col_start)") {
    TransformSpec shifted = spec;
    shifted.crop_row_offset = 64;
    shifted.crop_width = 640;
    const auto g = plan_transform(shifted, 1024, 700);
    CHECK(g.pad_left == 2);
    CHECK(g.col_start == 32);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const std::int64_t r = 64 + static_cast<std::int64_t>(rng() % 352);
      const std::int64_t c = 30 + static_cast<std::int64_t>(rng() % 640);
      Tensor<std::uint8_t> mask({1024, 700});
      mask.at(r, c) = 1;
      const auto out = apply_transform(img, mask, shifted);
      std::int64_t count = 0;
      for (auto v : out.mask.values()) count += v;
      CHECK(count == 1);
      CHECK(out.mask.at(r - 64, c + 2 - 32) == 1);
      CHECK(out.image.at(r - 64, c + 2 - 32) == img.at(r, c));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(apply_transform(img, Tensor<std::uint8_t>({1024, 704}), spec), ShapeError);
  }
  SUBCASE("idempotent on already-transformed data") {
    Tensor<std::uint8_t> mask({1024, 700});
    mask.at(10, 10) = 1;
    const auto once = apply_transform(img, mask, spec);
    const auto twice = apply_transform(once.image, once.mask, spec);
    CHECK(twice.image == once.image);
    CHECK(twice.mask == once.mask);
  }
  SUBCASE("padded columns never carry mask positives") {
    Tensor<std::uint8_t> full({1024, 700}, 1);
    const auto out = transform_mask(full, spec);
    const auto g = plan_transform(spec, 1024, 700);
    for (std::int64_t y = 0; y < out.dim(0); ++y)
      for (std::int64_t x = 0; x < out.dim(1); ++x) CHECK(out.at(y, x) == (g.is_padding(x) ? 0 : 1));
  }
}

TEST_CASE("normalization") {
  TransformSpec spec;
  spec.target_width = 32;
  spec.crop_height = 32;
  spec.crop_width = 32;
  Tensor<float> img({32, 32}, 0.25f);
  img.at(0, 0) = 1.5f;
  img.at(0, 1) = -0.5f;
  const auto unit = transform_image(img, spec);
  CHECK(unit.at(0, 0) == 1.0f);
  CHECK(unit.at(0, 1) == 0.0f);
  CHECK(unit.at(5, 5) == 0.25f);
  spec.normalize = Normalize::none;
  CHECK(transform_image(img, spec) == img);
}

TEST_CASE("restore_mask inverts the placement") {
  TransformSpec spec;
  spec.crop_row_offset = 16;
  const auto g = plan_transform(spec, 1024, 700);
  Tensor<std::uint8_t> t({352, 704}, 1);
  const auto native = restore_mask(t, spec, 1024, 700);
  REQUIRE(native.shape() == Shape{1024, 700});
  for (std::int64_t y = 0; y < 1024; y += 3)
    for (std::int64_t x = 0; x < 700; x += 5) {
      const bool inside = y >= 16 && y < 16 + 352;
      CHECK(native.at(y, x) == (inside ? 1 : 0));
    }
  CHECK(g.pad_right == 2);
  // transform(restore(m)) == m for masks that avoid the padding.
  Tensor<std::uint8_t> m({352, 704});
  m.at(100, 200) = 1;
  m.at(0, 2) = 1;
  CHECK(transform_mask(restore_mask(m, spec, 1024, 700), spec) == m);
}
