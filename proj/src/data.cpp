#include "octseg/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

namespace octseg {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor<float> Volume::slice(std::int64_t s) const {
  auto view = slices.outer(s);
  return Tensor<float>({height(), width()}, std::vector<float>(view.begin(), view.end()));
}

Tensor<std::uint8_t> MaskVolume::slice(std::int64_t s) const {
  auto view = labels.outer(s);
  return Tensor<std::uint8_t>({labels.dim(1), labels.dim(2)},
                              std::vector<std::uint8_t>(view.begin(), view.end()));
}

std::string slice_filename(std::int64_t index) { return fmt::format("{:04d}.png", index); }

// ---------------------------------------------------------------------------
// Volume and mask stacks

std::vector<fs::path> list_slice_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::pair<unsigned long long, fs::path>> numbered;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") continue;
    const auto stem = entry.path().stem().string();
    const bool numeric = !stem.empty() && std::all_of(stem.begin(), stem.end(), [](unsigned char c) {
      return std::isdigit(c) != 0;
    });
    if (!numeric) {
      throw ValidationError("ordering error: slice filename '" + entry.path().filename().string() +
                            "' in " + dir.string() + " has a non-numeric stem");
    }
    numbered.emplace_back(std::stoull(stem), entry.path());
  }
  std::sort(numbered.begin(), numbered.end());
  for (std::size_t i = 1; i < numbered.size(); ++i) {
    if (numbered[i].first == numbered[i - 1].first) {
      throw ValidationError("ordering error: duplicate slice number in " + dir.string());
    }
  }
  std::vector<fs::path> files;
  files.reserve(numbered.size());
  for (auto& [_, p] : numbered) files.push_back(std::move(p));
  return files;
}

namespace {

std::string volume_id_for(const fs::path& dir) {
  auto clean = dir.lexically_normal();
  if (clean.filename().empty()) clean = clean.parent_path();
  if (clean.filename() == "slices" || clean.filename() == "masks") {
    return clean.parent_path().filename().string();
  }
  return clean.filename().string();
}

}  // namespace

Volume load_volume(const fs::path& dir, BitDepth bit_depth) {
  const auto files = list_slice_files(dir);
  if (files.empty()) throw IoError("no PNG slices in " + dir.string());
  Volume vol;
  vol.id = volume_id_for(dir);
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<float> data;
  for (const auto& file : files) {
    auto img = read_gray_png(file, bit_depth);
    if (data.empty()) {
      h = img.dim(0);
      w = img.dim(1);
      data.reserve(static_cast<std::size_t>(h * w) * files.size());
    } else if (img.dim(0) != h || img.dim(1) != w) {
      throw ShapeError("shape mismatch in " + dir.string() + ": " + file.filename().string() + " is " +
                       shape_to_string(img.shape()) + ", expected " + shape_to_string({h, w}));
    }
    data.insert(data.end(), img.values().begin(), img.values().end());
  }
  vol.slices = Tensor<float>({static_cast<std::int64_t>(files.size()), h, w}, std::move(data));
  vol.native_height = h;
  vol.native_width = w;
  return vol;
}

MaskVolume load_mask_volume(const fs::path& dir, const std::string& volume_id) {
  const auto files = list_slice_files(dir);
  if (files.empty()) throw IoError("no PNG masks in " + dir.string());
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> data;
  for (const auto& file : files) {
    auto img = read_mask_png(file);
    if (data.empty()) {
      h = img.dim(0);
      w = img.dim(1);
    } else if (img.dim(0) != h || img.dim(1) != w) {
      throw ShapeError("shape mismatch in " + dir.string() + ": " + file.filename().string());
    }
    data.insert(data.end(), img.values().begin(), img.values().end());
  }
  return {volume_id, Tensor<std::uint8_t>({static_cast<std::int64_t>(files.size()), h, w}, std::move(data))};
}

// ---------------------------------------------------------------------------
// Annotations

void validate_box(const BoxAnnotation& box, const Shape& shape) {
  const auto where = "box of volume '" + box.volume_id + "'";
  if (box.slice_start < 0 || box.slice_start >= box.slice_end) {
    throw ValidationError(where + ": empty or negative slice range [" + std::to_string(box.slice_start) +
                          ", " + std::to_string(box.slice_end) + ")");
  }
  if (box.x < 0 || box.y < 0 || box.w <= 0 || box.h <= 0) {
    throw ValidationError(where + ": box must have x, y >= 0 and positive w, h");
  }
  if (shape.empty()) return;
  if (shape.size() != 3) throw ShapeError("volume shape must be S x H x W");
  if (box.slice_end > shape[0]) {
    throw ValidationError(where + ": slice_end " + std::to_string(box.slice_end) + " exceeds " +
                          std::to_string(shape[0]) + " slices");
  }
  if (box.x + box.w > shape[2]) {
    throw ValidationError(where + ": x + w = " + std::to_string(box.x + box.w) + " exceeds width " +
                          std::to_string(shape[2]));
  }
  if (box.y + box.h > shape[1]) {
    throw ValidationError(where + ": y + h = " + std::to_string(box.y + box.h) + " exceeds height " +
                          std::to_string(shape[1]));
  }
}

std::vector<BoxAnnotation> parse_annotations(const std::string& text,
                                             const std::map<std::string, Shape>& dims) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("annotations: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("annotations: top level must be a JSON array");

  std::vector<BoxAnnotation> boxes;
  boxes.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const auto fail = [i](const std::string& msg) {
      throw ParseError("annotation record " + std::to_string(i) + ": " + msg);
    };
    if (!rec.is_object()) fail("not an object");
    BoxAnnotation box;
    try {
      box.volume_id = rec.at("volume_id").get<std::string>();
      box.slice_start = rec.at("slice_start").get<std::int64_t>();
      box.slice_end = rec.at("slice_end").get<std::int64_t>();
      box.x = rec.at("x").get<std::int64_t>();
      box.y = rec.at("y").get<std::int64_t>();
      box.w = rec.at("w").get<std::int64_t>();
      box.h = rec.at("h").get<std::int64_t>();
    } catch (const json::exception& e) {
      fail(e.what());
    }
    if (rec.contains("class")) {
      if (!rec["class"].is_string()) fail("class must be a string");
      if (rec["class"].get<std::string>() != "inclusion") {
        throw ValidationError("annotation record " + std::to_string(i) + ": unsupported class '" +
                              rec["class"].get<std::string>() + "' (only inclusion is segmented)");
      }
    }
    const auto it = dims.find(box.volume_id);
    validate_box(box, it == dims.end() ? Shape{} : it->second);
    boxes.push_back(std::move(box));
  }
  return boxes;
}

std::vector<BoxAnnotation> load_annotations(const fs::path& file, const std::map<std::string, Shape>& dims) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open annotations file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_annotations(buf.str(), dims);
}

void save_annotations(const fs::path& file, std::span<const BoxAnnotation> annotations) {
  json doc = json::array();
  for (const auto& b : annotations) {
    doc.push_back({{"volume_id", b.volume_id},
                   {"slice_start", b.slice_start},
                   {"slice_end", b.slice_end},
                   {"x", b.x},
                   {"y", b.y},
                   {"w", b.w},
                   {"h", b.h},
                   {"class", "inclusion"}});
  }
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

MaskVolume rasterize_boxes(std::span<const BoxAnnotation> annotations, const Shape& shape,
                           const std::string& volume_id) {
  if (shape.size() != 3) throw ShapeError("rasterize_boxes expects an S x H x W shape");
  MaskVolume mask{volume_id, Tensor<std::uint8_t>(shape, 0)};
  for (const auto& box : annotations) {
    if (!volume_id.empty() && box.volume_id != volume_id) continue;
    if (mask.volume_id.empty()) mask.volume_id = box.volume_id;
    validate_box(box, shape);
    for (auto s = box.slice_start; s < box.slice_end; ++s)
      for (auto y = box.y; y < box.y + box.h; ++y)
        std::fill_n(&mask.labels.at(s, y, box.x), box.w, std::uint8_t{1});
  }
  return mask;
}

std::vector<BoxAnnotation> extract_boxes(const MaskVolume& mask) {
  const auto& labels = mask.labels;
  if (labels.rank() != 3) throw ShapeError("extract_boxes expects an S x H x W mask");
  const auto S = labels.dim(0);
  const auto H = labels.dim(1);
  const auto W = labels.dim(2);
  std::vector<std::uint8_t> seen(labels.size(), 0);
  std::vector<BoxAnnotation> boxes;
  std::deque<std::int64_t> queue;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(labels.size()); ++start) {
    if (!labels[start] || seen[start]) continue;
    std::int64_t s0 = S, s1 = -1, y0 = H, y1 = -1, x0 = W, x1 = -1;
    seen[start] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const auto idx = queue.front();
      queue.pop_front();
      const auto s = idx / (H * W);
      const auto y = (idx / W) % H;
      const auto x = idx % W;
      s0 = std::min(s0, s), s1 = std::max(s1, s);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      const std::int64_t nbr[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
      for (const auto& d : nbr) {
        const auto ns = s + d[0], ny = y + d[1], nx = x + d[2];
        if (ns < 0 || ns >= S || ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        const auto nidx = (ns * H + ny) * W + nx;
        if (labels[nidx] && !seen[nidx]) {
          seen[nidx] = 1;
          queue.push_back(nidx);
        }
      }
    }
    boxes.push_back({mask.volume_id, s0, s1 + 1, x0, y0, x1 - x0 + 1, y1 - y0 + 1, DefectClass::inclusion});
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplit split_dataset(std::span<const std::string> ids, SplitCounts counts, std::uint64_t seed) {
  if (counts.train + counts.val + counts.test != ids.size()) {
    throw ConfigError(fmt::format("split counts {}+{}+{} do not sum to the {} provided volumes", counts.train,
                                  counts.val, counts.test, ids.size()));
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw ConfigError("split_dataset: duplicate volume ids");
  }
  std::vector<std::string> shuffled(ids.begin(), ids.end());
  std::sort(shuffled.begin(), shuffled.end());
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  DatasetSplit split;
  auto it = shuffled.begin();
  split.train_ids.assign(it, it + static_cast<std::ptrdiff_t>(counts.train));
  it += static_cast<std::ptrdiff_t>(counts.train);
  split.val_ids.assign(it, it + static_cast<std::ptrdiff_t>(counts.val));
  it += static_cast<std::ptrdiff_t>(counts.val);
  split.test_ids.assign(it, shuffled.end());
  for (auto* part : {&split.train_ids, &split.val_ids, &split.test_ids}) std::sort(part->begin(), part->end());
  return split;
}

DatasetSplit load_split(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open split file " + file.string());
  DatasetSplit split;
  try {
    const auto doc = json::parse(in);
    split.train_ids = doc.at("train").get<std::vector<std::string>>();
    split.val_ids = doc.at("val").get<std::vector<std::string>>();
    split.test_ids = doc.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError("split file " + file.string() + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto* part : {&split.train_ids, &split.val_ids, &split.test_ids}) {
    for (const auto& id : *part) {
      if (!seen.insert(id).second) {
        throw ValidationError("split file " + file.string() + ": volume '" + id + "' appears twice");
      }
    }
  }
  return split;
}

void save_split(const fs::path& file, const DatasetSplit& split) {
  const json doc = {{"train", split.train_ids}, {"val", split.val_ids}, {"test", split.test_ids}};
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic volumes

namespace {

constexpr double kAirLevel = 0.03;

struct SlabRows {
  std::int64_t top, bottom, ramp;
};

SlabRows slab_rows(std::int64_t height) {
  const auto top = static_cast<std::int64_t>(std::lround(0.12 * static_cast<double>(height)));
  const auto bottom = static_cast<std::int64_t>(std::lround(0.72 * static_cast<double>(height)));
  const auto ramp = std::max<std::int64_t>(2, height / 24);
  return {top, bottom, ramp};
}

struct Blob {
  double cs, cy, cx;
  double rs, ry, rx;
  double amplitude;
  // Support box (inclusive) of d <= 1.
  std::int64_t s0, s1, y0, y1, x0, x1;
};

bool boxes_touch(const Blob& a, const Blob& b) {
  const auto near = [](std::int64_t a0, std::int64_t a1, std::int64_t b0, std::int64_t b1) {
    return a0 <= b1 + 1 && b0 <= a1 + 1;
  };
  return near(a.s0, a.s1, b.s0, b.s1) && near(a.y0, a.y1, b.y0, b.y1) && near(a.x0, a.x1, b.x0, b.x1);
}

}  // namespace

std::pair<std::int64_t, std::int64_t> SyntheticSpec::plateau_rows() const {
  const auto r = slab_rows(height);
  return {r.top + r.ramp, r.bottom - r.ramp};
}

double SyntheticSpec::background_at_row(std::int64_t y) const {
  const auto r = slab_rows(height);
  double weight = 0.0;
  if (y >= r.top && y < r.bottom) {
    const double from_top = static_cast<double>(y - r.top);
    const double to_bottom = static_cast<double>(r.bottom - 1 - y);
    const double edge = std::min(from_top, to_bottom);
    const double ramp = static_cast<double>(r.ramp);
    weight = edge >= ramp ? 1.0 : 0.5 * (1.0 - std::cos(std::numbers::pi * edge / ramp));
  }
  return kAirLevel + (slab_level - kAirLevel) * weight;
}

double SyntheticSpec::mean_background() const {
  double sum = 0.0;
  for (std::int64_t y = 0; y < height; ++y) sum += background_at_row(y);
  return sum / static_cast<double>(height);
}

void SyntheticSpec::validate() const {
  if (n_volumes == 0) throw ConfigError("synthetic: n_volumes must be >= 1");
  if (slices_per_volume < 1) throw ConfigError("synthetic: slices_per_volume must be >= 1");
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError(fmt::format("synthetic: {}x{} slices are not divisible by 32", height, width));
  }
  if (inclusions_per_volume.min > inclusions_per_volume.max || inclusion_radius.min > inclusion_radius.max ||
      inclusion_intensity.min > inclusion_intensity.max) {
    throw ConfigError("synthetic: degenerate range (min > max)");
  }
  if (inclusions_per_volume.min < 0) throw ConfigError("synthetic: negative inclusion count");
  if (inclusion_radius.min < 1.0) throw ConfigError("synthetic: inclusion radius must be >= 1 pixel");
  if (inclusion_intensity.max > 1.0) throw ConfigError("synthetic: inclusion intensity must be <= 1");
  if (background_noise_std < 0.0) throw ConfigError("synthetic: negative noise std");
  if (slab_level < kAirLevel || slab_level > 1.0) throw ConfigError("synthetic: slab level out of range");
  if (inclusion_intensity.min <= mean_background()) {
    throw ConfigError(fmt::format("synthetic: inclusion intensity {} does not exceed the mean background {:.4f}",
                                  inclusion_intensity.min, mean_background()));
  }
  const auto [p0, p1] = plateau_rows();
  const auto need = 2 * static_cast<std::int64_t>(std::floor(inclusion_radius.max)) + 1;
  if (p1 - p0 < need || width < need) {
    throw ConfigError("synthetic: inclusion radius too large for the slab");
  }
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto S = spec.slices_per_volume;
  const auto H = spec.height;
  const auto W = spec.width;
  const auto [p0, p1] = spec.plateau_rows();

  std::vector<Sample> out;
  out.reserve(spec.n_volumes);
  for (std::size_t v = 0; v < spec.n_volumes; ++v) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(v)};
    std::mt19937_64 rng(seq);
    const auto uniform = [&rng](double lo, double hi) {
      return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    const auto uniform_int = [&rng](std::int64_t lo, std::int64_t hi) {
      return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
    };

    const auto count = uniform_int(spec.inclusions_per_volume.min, spec.inclusions_per_volume.max);
    std::vector<Blob> blobs;
    int attempts = 0;
    while (static_cast<std::int64_t>(blobs.size()) < count) {
      if (++attempts > 10000) {
        throw ConfigError("synthetic: cannot place " + std::to_string(count) +
                          " separated inclusions; enlarge the volume or shrink the radius");
      }
      Blob b{};
      b.ry = uniform(spec.inclusion_radius.min, spec.inclusion_radius.max);
      b.rx = uniform(spec.inclusion_radius.min, spec.inclusion_radius.max);
      b.rs = std::max(1.0, uniform(spec.inclusion_radius.min, spec.inclusion_radius.max) / 2.0);
      const auto ky = static_cast<std::int64_t>(std::floor(b.ry));
      const auto kx = static_cast<std::int64_t>(std::floor(b.rx));
      const auto ks = static_cast<std::int64_t>(std::floor(b.rs));
      b.cs = static_cast<double>(uniform_int(0, S - 1));
      b.cy = static_cast<double>(uniform_int(p0 + ky, p1 - 1 - ky));
      b.cx = static_cast<double>(uniform_int(kx, W - 1 - kx));
      b.amplitude = uniform(spec.inclusion_intensity.min, spec.inclusion_intensity.max);
      const auto cs = static_cast<std::int64_t>(b.cs);
      const auto cy = static_cast<std::int64_t>(b.cy);
      const auto cx = static_cast<std::int64_t>(b.cx);
      b.s0 = std::max<std::int64_t>(0, cs - ks), b.s1 = std::min(S - 1, cs + ks);
      b.y0 = cy - ky, b.y1 = cy + ky;
      b.x0 = cx - kx, b.x1 = cx + kx;
      if (std::any_of(blobs.begin(), blobs.end(), [&](const Blob& o) { return boxes_touch(b, o); })) continue;
      blobs.push_back(b);
    }

    Sample sample;
    sample.volume.id = fmt::format("vol{:03d}", v);
    sample.volume.native_height = H;
    sample.volume.native_width = W;
    Tensor<float> image({S, H, W});
    Tensor<std::uint8_t> labels({S, H, W}, 0);
    std::vector<double> field(static_cast<std::size_t>(H * W));
    std::normal_distribution<double> speckle(0.0, spec.background_noise_std > 0 ? spec.background_noise_std : 1.0);

    for (std::int64_t s = 0; s < S; ++s) {
      for (std::int64_t y = 0; y < H; ++y) {
        std::fill_n(field.begin() + y * W, W, spec.background_at_row(y));
      }
      for (const auto& b : blobs) {
        // Profile A * 2^(-d^2) reaches half its peak exactly on d = 1.
        const double ds = (static_cast<double>(s) - b.cs) / b.rs;
        if (ds * ds > 9.0) continue;
        const auto y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.cy - 3 * b.ry));
        const auto y_hi = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(b.cy + 3 * b.ry));
        const auto x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.cx - 3 * b.rx));
        const auto x_hi = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(b.cx + 3 * b.rx));
        for (auto y = y_lo; y <= y_hi; ++y) {
          const double dy = (static_cast<double>(y) - b.cy) / b.ry;
          for (auto x = x_lo; x <= x_hi; ++x) {
            const double dx = (static_cast<double>(x) - b.cx) / b.rx;
            const double d2 = ds * ds + dy * dy + dx * dx;
            field[static_cast<std::size_t>(y * W + x)] += b.amplitude * std::exp2(-d2);
            if (d2 <= 1.0) labels.at(s, y, x) = 1;
          }
        }
      }
      for (std::int64_t i = 0; i < H * W; ++i) {
        double value = field[static_cast<std::size_t>(i)];
        if (spec.background_noise_std > 0) value += speckle(rng);
        image[static_cast<std::size_t>(s * H * W + i)] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
    sample.volume.slices = std::move(image);
    sample.mask = {sample.volume.id, std::move(labels)};
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset tree

std::vector<std::string> list_volume_ids(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::is_directory(entry.path() / "slices")) {
      ids.push_back(entry.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

Sample load_sample_impl(const fs::path& root, const std::string& volume_id, BitDepth bit_depth,
                        const std::vector<BoxAnnotation>* annotations) {
  Sample sample;
  sample.volume = load_volume(root / volume_id / "slices", bit_depth);
  sample.volume.id = volume_id;
  const auto mask_dir = root / volume_id / "masks";
  if (fs::is_directory(mask_dir) && !list_slice_files(mask_dir).empty()) {
    sample.mask = load_mask_volume(mask_dir, volume_id);
    if (sample.mask.labels.shape() != sample.volume.slices.shape()) {
      throw ShapeError("mask stack of '" + volume_id + "' is " + shape_to_string(sample.mask.labels.shape()) +
                       " but the volume is " + shape_to_string(sample.volume.slices.shape()));
    }
  } else if (annotations != nullptr) {
    sample.mask = rasterize_boxes(*annotations, sample.volume.slices.shape(), volume_id);
    sample.mask.volume_id = volume_id;
  } else {
    throw ValidationError("missing masks for volume: " + volume_id);
  }
  return sample;
}

}  // namespace

Sample load_sample(const fs::path& root, const std::string& volume_id, BitDepth bit_depth,
                   std::span<const BoxAnnotation> annotations) {
  const std::vector<BoxAnnotation> boxes(annotations.begin(), annotations.end());
  const bool have_annotations = fs::exists(root / "annotations.json") || !boxes.empty();
  return load_sample_impl(root, volume_id, bit_depth, have_annotations ? &boxes : nullptr);
}

std::vector<Sample> load_samples(const fs::path& root, std::span<const std::string> ids, BitDepth bit_depth) {
  std::optional<std::vector<BoxAnnotation>> annotations;
  if (fs::exists(root / "annotations.json")) annotations = load_annotations(root / "annotations.json");

  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (!fs::is_directory(root / id / "slices")) {
      throw IoError("volume '" + id + "' not found under " + root.string());
    }
    const auto mask_dir = root / id / "masks";
    if (!annotations && !(fs::is_directory(mask_dir) && !fs::is_empty(mask_dir))) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("missing masks for volumes: " + list);
  }

  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    samples.push_back(load_sample_impl(root, id, bit_depth, annotations ? &*annotations : nullptr));
  }
  return samples;
}

void write_sample(const fs::path& root, const Sample& sample, BitDepth bit_depth) {
  const auto slice_dir = root / sample.volume.id / "slices";
  const auto mask_dir = root / sample.volume.id / "masks";
  fs::create_directories(slice_dir);
  fs::create_directories(mask_dir);
  for (std::int64_t s = 0; s < sample.volume.slice_count(); ++s) {
    write_gray_png(slice_dir / slice_filename(s), sample.volume.slice(s), bit_depth);
    write_mask_png(mask_dir / slice_filename(s), sample.mask.slice(s));
  }
}

// ---------------------------------------------------------------------------
// Batches

BatchStream::BatchStream(std::span<const Sample> samples, TransformSpec transform, std::int64_t batch_size,
                         bool shuffle, std::uint64_t seed, std::int64_t in_channels)
    : samples_(samples), transform_(transform), batch_size_(batch_size), in_channels_(in_channels) {
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  if (in_channels_ < 1) throw ConfigError("in_channels must be >= 1");
  transform_.validate();
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.volume.slices.shape() != s.mask.labels.shape()) {
      throw ShapeError("volume '" + s.volume.id + "' and its mask are not aligned");
    }
    transform_.validate_for(s.volume.height(), s.volume.width());
    for (std::int64_t z = 0; z < s.volume.slice_count(); ++z) order_.emplace_back(i, z);
  }
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  const auto h = transform_.crop_height;
  const auto w = transform_.crop_width;
  Batch batch;
  batch.images = Tensor<float>({static_cast<std::int64_t>(n), in_channels_, h, w});
  batch.masks = Tensor<float>({static_cast<std::int64_t>(n), 1, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    const auto [vi, z] = order_[cursor_ + b];
    const auto& sample = samples_[vi];
    const auto pair = apply_transform(sample.volume.slice(z), sample.mask.slice(z), transform_);
    auto dst = batch.images.outer(static_cast<std::int64_t>(b));
    for (std::int64_t c = 0; c < in_channels_; ++c) {
      std::copy(pair.image.values().begin(), pair.image.values().end(), dst.begin() + c * h * w);
    }
    std::copy(pair.mask.values().begin(), pair.mask.values().end(),
              batch.masks.outer(static_cast<std::int64_t>(b)).begin());
    batch.source.push_back({sample.volume.id, z});
  }
  cursor_ += n;
  return batch;
}

std::vector<Batch> iterate_batches(std::span<const Sample> samples, const TransformSpec& transform,
                                   std::int64_t batch_size, bool shuffle, std::uint64_t seed,
                                   std::int64_t in_channels) {
  BatchStream stream(samples, transform, batch_size, shuffle, seed, in_channels);
  std::vector<Batch> batches;
  while (auto b = stream.next()) batches.push_back(std::move(*b));
  return batches;
}

}  // namespace octseg
