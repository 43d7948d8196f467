#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "octseg/data.hpp"
#include "octseg/image_io.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace octseg;
namespace fs = std::filesystem;

namespace {

Tensor<float> ramp(std::int64_t h, std::int64_t w, float scale = 1.0f) {
  Tensor<float> t({h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) t.at(y, x) = scale * static_cast<float>((y * w + x) % 256) / 255.0f;
  return t;
}

Sample make_sample(const std::string& id, std::int64_t slices, std::int64_t h = 32, std::int64_t w = 32) {
  Sample s;
  s.volume.id = id;
  s.volume.slices = Tensor<float>({slices, h, w});
  for (std::int64_t i = 0; i < slices; ++i) s.volume.slices.at(i, 0, 0) = static_cast<float>(i) / 100.0f;
  s.volume.native_height = h;
  s.volume.native_width = w;
  s.mask.volume_id = id;
  s.mask.labels = Tensor<std::uint8_t>({slices, h, w});
  return s;
}

TransformSpec identity_transform(std::int64_t h, std::int64_t w) {
  TransformSpec t;
  t.target_width = w;
  t.crop_height = h;
  t.crop_width = w;
  return t;
}

}  // namespace

TEST_CASE("load_volume reads a single zero slice") {
  TempDir dir;
  write_gray_png(dir / "0001.png", Tensor<float>({32, 32}), BitDepth::k8);
  const auto v = load_volume(dir.path());
  CHECK(v.slices.shape() == Shape{1, 32, 32});
  CHECK(std::all_of(v.slices.values().begin(), v.slices.values().end(), [](float x) { return x == 0.0f; }));
  CHECK(v.native_height == 32);
  CHECK(v.native_width == 32);
}

TEST_CASE("load_volume orders slices numerically and scales to [0,1]") {
  TempDir dir;
  fs::create_directories(dir / "vol7" / "slices");
  const auto slices = dir / "vol7" / "slices";
  // Lexicographic order would put 10 before 2.
  for (int i : {10, 2, 1}) {
    Tensor<float> img({32, 64}, static_cast<float>(i) / 255.0f);
    write_gray_png(slices / (std::to_string(i) + ".png"), img, BitDepth::k8);
  }
  const auto v = load_volume(slices);
  CHECK(v.id == "vol7");
  REQUIRE(v.slice_count() == 3);
  CHECK(v.slices.at(0, 0, 0) == doctest::Approx(1.0 / 255));
  CHECK(v.slices.at(1, 0, 0) == doctest::Approx(2.0 / 255));
  CHECK(v.slices.at(2, 5, 5) == doctest::Approx(10.0 / 255));
}

TEST_CASE("load_volume round-trips 16-bit slices") {
  TempDir dir;
  const auto img = ramp(32, 32, 0.5f);
  write_gray_png(dir / "0000.png", img, BitDepth::k16);
  const auto v = load_volume(dir.path(), BitDepth::k16);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x) CHECK(v.slices.at(0, y, x) == doctest::Approx(img.at(y, x)).epsilon(1e-4));
  CHECK_THROWS_AS(load_volume(dir.path(), BitDepth::k8), IoError);
}

TEST_CASE("load_volume rejects mixed dimensions, bad names and unreadable files") {
  SUBCASE("shape mismatch") {
    TempDir dir;
    write_gray_png(dir / "0001.png", Tensor<float>({64, 64}), BitDepth::k8);
    write_gray_png(dir / "0002.png", Tensor<float>({32, 32}), BitDepth::k8);
    CHECK_THROWS_AS(load_volume(dir.path()), ShapeError);
  }
  SUBCASE("non-numeric filename") {
    TempDir dir;
    write_gray_png(dir / "0001.png", Tensor<float>({32, 32}), BitDepth::k8);
    write_gray_png(dir / "scan_a.png", Tensor<float>({32, 32}), BitDepth::k8);
    CHECK_THROWS_WITH_AS(load_volume(dir.path()), doctest::Contains("ordering error"), ValidationError);
  }
  SUBCASE("corrupt PNG names the file") {
    TempDir dir;
    std::ofstream(dir / "0003.png") << "not a png";
    CHECK_THROWS_WITH_AS(load_volume(dir.path()), doctest::Contains("0003.png"), IoError);
  }
}

TEST_CASE("parse_annotations") {
  SUBCASE("single record") {
    const auto boxes = parse_annotations(
        R"([{"volume_id":"v1","slice_start":10,"slice_end":15,"x":100,"y":50,"w":20,"h":12,"class":"inclusion"}])");
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].volume_id == "v1");
    CHECK(boxes[0].slice_end - boxes[0].slice_start == 5);
    CHECK(boxes[0].x == 100);
    CHECK(boxes[0].y == 50);
    CHECK(boxes[0].w == 20);
    CHECK(boxes[0].h == 12);
  }
  SUBCASE("empty list") { CHECK(parse_annotations("[]").empty()); }
  SUBCASE("out of bounds against declared dims") {
    const std::map<std::string, Shape> dims{{"v1", {20, 64, 110}}};
    CHECK_THROWS_AS(
        parse_annotations(
            R"([{"volume_id":"v1","slice_start":10,"slice_end":15,"x":100,"y":50,"w":20,"h":12,"class":"inclusion"}])",
            dims),
        ValidationError);
  }
  SUBCASE("malformed record reports its index") {
    CHECK_THROWS_WITH_AS(
        parse_annotations(
            R"([{"volume_id":"v1","slice_start":0,"slice_end":1,"x":0,"y":0,"w":1,"h":1,"class":"inclusion"},
                {"volume_id":"v1","slice_start":"zero"}])"),
        doctest::Contains("record 1"), ParseError);
  }
  SUBCASE("unsupported class") {
    CHECK_THROWS_AS(
        parse_annotations(R"([{"volume_id":"v","slice_start":0,"slice_end":1,"x":0,"y":0,"w":1,"h":1,"class":"pore"}])"),
        ValidationError);
  }
  SUBCASE("save/load round trip") {
    TempDir dir;
    const std::vector<BoxAnnotation> boxes{{"a", 0, 3, 1, 2, 3, 4}, {"b", 5, 6, 0, 0, 8, 8}};
    save_annotations(dir / "annotations.json", boxes);
    CHECK(load_annotations(dir / "annotations.json") == boxes);
  }
}

TEST_CASE("rasterize_boxes") {
  SUBCASE("one 2x2 box") {
    const std::vector<BoxAnnotation> boxes{{"v", 0, 1, 0, 0, 2, 2}};
    const auto m = rasterize_boxes(boxes, {1, 4, 4});
    CHECK(std::count(m.labels.values().begin(), m.labels.values().end(), 1) == 4);
  }
  SUBCASE("no boxes") {
    const auto m = rasterize_boxes({}, {2, 4, 4});
    CHECK(std::count(m.labels.values().begin(), m.labels.values().end(), 0) == 32);
  }
  SUBCASE("overlapping boxes match a pixel-in-box oracle") {
    const std::vector<BoxAnnotation> boxes{{"v", 0, 1, 0, 0, 2, 2}, {"v", 0, 1, 1, 0, 2, 2}};
    const auto m = rasterize_boxes(boxes, {1, 4, 4});
    std::int64_t expected = 0;
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) {
        bool inside = false;
        for (const auto& b : boxes) inside |= x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
        expected += inside;
        CHECK(m.labels.at(0, y, x) == (inside ? 1 : 0));
      }
    CHECK(expected == 6);
  }
  SUBCASE("volume filter") {
    const std::vector<BoxAnnotation> boxes{{"a", 0, 1, 0, 0, 1, 1}, {"b", 0, 1, 3, 3, 1, 1}};
    const auto m = rasterize_boxes(boxes, {1, 4, 4}, "b");
    CHECK(m.labels.at(0, 0, 0) == 0);
    CHECK(m.labels.at(0, 3, 3) == 1);
  }
}

TEST_CASE("rasterize then extract reproduces isolated boxes") {
  const std::vector<BoxAnnotation> boxes{{"v", 0, 2, 1, 1, 3, 2}, {"v", 3, 6, 10, 4, 2, 5}, {"v", 1, 2, 20, 20, 4, 4}};
  const auto mask = rasterize_boxes(boxes, {6, 32, 32});
  auto found = extract_boxes(mask);
  for (auto& b : found) b.volume_id = "v";
  auto key = [](const BoxAnnotation& b) { return std::tie(b.slice_start, b.y, b.x); };
  std::sort(found.begin(), found.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  auto expected = boxes;
  std::sort(expected.begin(), expected.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  CHECK(found == expected);
}

TEST_CASE("split_dataset") {
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back("v" + std::to_string(i));

  const auto split = split_dataset(ids, {21, 6, 3}, 7);
  CHECK(split.train_ids.size() == 21);
  CHECK(split.val_ids.size() == 6);
  CHECK(split.test_ids.size() == 3);
  std::set<std::string> all;
  for (const auto* part : {&split.train_ids, &split.val_ids, &split.test_ids}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 30);
  CHECK(split_dataset(ids, {21, 6, 3}, 7) == split);
  CHECK_THROWS_AS(split_dataset(ids, {20, 6, 3}, 7), ConfigError);

  const std::vector<std::string> three{"a", "b", "c"};
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const auto s = split_dataset(three, {1, 1, 1}, seed);
    std::multiset<std::string> seen{s.train_ids[0], s.val_ids[0], s.test_ids[0]};
    CHECK(seen == std::multiset<std::string>{"a", "b", "c"});
  }

  TempDir dir;
  save_split(dir / "split.json", split);
  CHECK(load_split(dir / "split.json") == split);
}

TEST_CASE("generate_synthetic") {
  SyntheticSpec spec;
  spec.n_volumes = 3;
  spec.slices_per_volume = 10;
  spec.height = 64;
  spec.width = 96;

  SUBCASE("no inclusions gives empty masks") {
    spec.inclusions_per_volume = {0, 0};
    for (const auto& s : generate_synthetic(spec))
      CHECK(std::all_of(s.mask.labels.values().begin(), s.mask.labels.values().end(), [](auto v) { return v == 0; }));
  }
  SUBCASE("deterministic") {
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].volume.slices == b[i].volume.slices);
      CHECK(a[i].mask.labels == b[i].mask.labels);
    }
    spec.seed = 2;
    CHECK_FALSE(generate_synthetic(spec)[0].volume.slices == a[0].volume.slices);
  }
  SUBCASE("exactly k connected components") {
    spec.inclusions_per_volume = {3, 3};
    for (const auto& s : generate_synthetic(spec)) CHECK(oracle::count_components(s.mask.labels) == 3);
  }
  SUBCASE("noiseless inclusions are brighter than the mean background") {
    spec.background_noise_std = 0.0;
    const double mean_bg = spec.mean_background();
    for (const auto& s : generate_synthetic(spec)) {
      for (std::size_t i = 0; i < s.mask.labels.size(); ++i) {
        CHECK((s.mask.labels[i] == 0 || s.mask.labels[i] == 1));
        if (s.mask.labels[i]) CHECK(s.volume.slices[i] >= mean_bg);
      }
    }
  }
  SUBCASE("intensities stay in [0,1]") {
    for (const auto& s : generate_synthetic(spec))
      for (float v : s.volume.slices.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  SUBCASE("invalid specs") {
    spec.inclusion_radius = {5.0, 2.0};
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.inclusion_radius = {2.0, 5.0};
    spec.inclusion_intensity = {0.01, 0.5};
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.inclusion_intensity = {0.45, 0.7};
    spec.height = 100;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  }
}

TEST_CASE("batch streaming") {
  const std::vector<Sample> samples{make_sample("a", 20), make_sample("b", 15)};
  const auto t = identity_transform(32, 32);

  SUBCASE("35 slices in batches of 16") {
    const auto batches = iterate_batches(samples, t, 16, false, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 16);
    CHECK(batches[1].size() == 16);
    CHECK(batches[2].size() == 3);
    CHECK(batches[0].images.shape() == Shape{16, 1, 32, 32});
    CHECK(batches[2].masks.shape() == Shape{3, 1, 32, 32});
  }
  SUBCASE("unshuffled order is volume then slice") {
    std::vector<Batch::Source> order;
    for (const auto& b : iterate_batches(samples, t, 16, false, 0))
      order.insert(order.end(), b.source.begin(), b.source.end());
    std::vector<Batch::Source> expected;
    for (const auto& s : samples)
      for (std::int64_t i = 0; i < s.volume.slice_count(); ++i) expected.push_back({s.volume.id, i});
    CHECK(order == expected);
    // Images follow their source slice.
    const auto first = iterate_batches(samples, t, 16, false, 0)[1];
    CHECK(first.images.at(0, 0, 0, 0) == doctest::Approx(16 / 100.0));
  }
  SUBCASE("shuffle is a seeded permutation") {
    const auto a = iterate_batches(samples, t, 16, true, 5);
    const auto b = iterate_batches(samples, t, 16, true, 5);
    const auto c = iterate_batches(samples, t, 16, true, 6);
    std::multiset<std::pair<std::string, std::int64_t>> seen;
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].source == b[i].source);
      differs |= !(a[i].source == c[i].source);
      for (const auto& s : a[i].source) seen.insert({s.volume_id, s.slice_index});
    }
    CHECK(differs);
    CHECK(seen.size() == 35);
    CHECK(std::set<std::pair<std::string, std::int64_t>>(seen.begin(), seen.end()).size() == 35);
  }
  SUBCASE("empty input yields no batches") { CHECK(iterate_batches({}, t, 16, true, 0).empty()); }
  SUBCASE("channel replication") {
    const auto b = iterate_batches(samples, t, 4, false, 0, 3)[0];
    CHECK(b.images.shape() == Shape{4, 3, 32, 32});
    CHECK(b.images.at(1, 2, 0, 0) == b.images.at(1, 0, 0, 0));
  }
}

TEST_CASE("dataset tree") {
  TempDir root;
  SyntheticSpec spec;
  spec.n_volumes = 3;
  spec.slices_per_volume = 4;
  spec.height = 32;
  spec.width = 64;
  const auto samples = generate_synthetic(spec);
  for (const auto& s : samples) write_sample(root.path(), s);

  const auto ids = list_volume_ids(root.path());
  REQUIRE(ids.size() == 3);
  const auto loaded = load_samples(root.path(), ids);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].mask.labels == samples[i].mask.labels);
    for (std::size_t j = 0; j < samples[i].volume.slices.size(); ++j)
      CHECK(std::abs(loaded[i].volume.slices[j] - samples[i].volume.slices[j]) <= 0.5f / 255.0f + 1e-6f);
  }

  SUBCASE("missing masks are reported by volume") {
    fs::remove_all(root / ids[0] / "masks");
    fs::remove_all(root / ids[2] / "masks");
    try {
      load_samples(root.path(), ids);
      FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(ids[0]) != std::string::npos);
      CHECK(msg.find(ids[2]) != std::string::npos);
      CHECK(msg.find(ids[1]) == std::string::npos);
    }
  }
  SUBCASE("annotations stand in for missing masks") {
    fs::remove_all(root / ids[1] / "masks");
    std::vector<BoxAnnotation> boxes{{ids[1], 0, 2, 3, 4, 5, 6}};
    save_annotations(root / "annotations.json", boxes);
    const auto s = load_samples(root.path(), std::vector<std::string>{ids[1]});
    CHECK(s[0].mask.labels == rasterize_boxes(boxes, s[0].volume.slices.shape()).labels);
  }
}
