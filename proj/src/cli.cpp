#include "octseg/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "octseg/checkpoint.hpp"
#include "octseg/config_io.hpp"
#include "octseg/eval.hpp"
#include "octseg/image_io.hpp"

namespace octseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reference figures published for the full-size pipeline on a datacenter GPU.
// Reported next to local timings for context only.
constexpr double kReferenceSecondsPerSlice = 0.027;
constexpr double kReferenceSecondsPerVolume = 18.98;

BitDepth parse_bit_depth(int bits) {
  if (bits == 8) return BitDepth::k8;
  if (bits == 16) return BitDepth::k16;
  throw ConfigError("bit depth must be 8 or 16, got " + std::to_string(bits));
}

template <typename T>
Range<T> parse_range(const std::string& text, const char* what) {
  std::vector<T> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      if constexpr (std::is_integral_v<T>) {
        parts.push_back(static_cast<T>(std::stoll(item)));
      } else {
        parts.push_back(static_cast<T>(std::stod(item)));
      }
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}: cannot parse '{}'", what, text));
    }
  }
  if (parts.size() == 1) return {parts[0], parts[0]};
  if (parts.size() == 2) return {parts[0], parts[1]};
  throw ConfigError(fmt::format("{}: expected 'value' or 'min,max', got '{}'", what, text));
}

SplitCounts parse_counts(const std::string& text) {
  std::vector<std::size_t> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      parts.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("split counts must be 'train,val,test', got '" + text + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("split counts must be 'train,val,test', got '" + text + "'");
  return {parts[0], parts[1], parts[2]};
}

/// Accepts a volume root (holding slices/) or the slice directory itself.
fs::path slice_dir_of(const fs::path& dir) {
  if (fs::is_directory(dir / "slices")) return dir / "slices";
  return dir;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace

SplitCounts default_split_counts(std::size_t n) {
  if (n < 3) throw ConfigError("at least 3 volumes are needed for a train/val/test split, found " + std::to_string(n));
  if (n == 30) return {21, 6, 3};
  auto val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
  auto test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n))));
  while (val + test >= n) (val > 1 ? val : test)--;
  return {n - val - test, val, test};
}

json to_json(const RunConfig& c) {
  json split = {{"seed", c.split_seed}};
  if (c.split_file) split["file"] = c.split_file->string();
  if (c.split_counts) split["counts"] = {c.split_counts->train, c.split_counts->val, c.split_counts->test};
  json j = {{"data_root", c.data_root.string()},
            {"split", split},
            {"transform", c.transform},
            {"model", c.model},
            {"train", c.train},
            {"loss", c.train.loss.id},
            {"out_dir", c.out_dir.string()},
            {"bit_depth", static_cast<int>(c.bit_depth)}};
  j["weights"] = c.weights ? json(c.weights->string()) : json(nullptr);
  return j;
}

void merge_json(const json& j, RunConfig& c) {
  try {
    if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("split")) {
      const auto& s = j.at("split");
      if (s.contains("file") && !s.at("file").is_null()) c.split_file = s.at("file").get<std::string>();
      if (s.contains("counts")) {
        const auto v = s.at("counts").get<std::vector<std::size_t>>();
        if (v.size() != 3) throw ConfigError("split.counts must hold three entries");
        c.split_counts = SplitCounts{v[0], v[1], v[2]};
      }
      if (s.contains("seed")) c.split_seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("transform")) from_json(j.at("transform"), c.transform);
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("loss")) c.train.loss = LossConfig::preset(j.at("loss").get<int>());
    if (j.contains("bit_depth")) c.bit_depth = parse_bit_depth(j.at("bit_depth").get<int>());
    if (j.contains("weights") && !j.at("weights").is_null()) c.weights = j.at("weights").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

namespace {

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string config;
  std::size_t volumes = 12;
  std::int64_t slices = 16;
  std::int64_t height = 96;
  std::int64_t width = 192;
  std::uint64_t seed = 1;
  std::string inclusions;
  std::string radius;
  std::string intensity;
  double noise = -1.0;
  int bit_depth = 8;
  bool force = false;
};

int cmd_synth(const SynthArgs& a, CLI::App& sub, std::ostream& out) {
  SyntheticSpec spec;
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    if (j.contains("synthetic")) from_json(j.at("synthetic"), spec);
  }
  if (sub.count("--volumes") || a.config.empty()) spec.n_volumes = a.volumes;
  if (sub.count("--slices") || a.config.empty()) spec.slices_per_volume = a.slices;
  if (sub.count("--height") || a.config.empty()) spec.height = a.height;
  if (sub.count("--width") || a.config.empty()) spec.width = a.width;
  if (sub.count("--seed") || a.config.empty()) spec.seed = a.seed;
  if (!a.inclusions.empty()) spec.inclusions_per_volume = parse_range<int>(a.inclusions, "--inclusions");
  if (!a.radius.empty()) spec.inclusion_radius = parse_range<double>(a.radius, "--radius");
  if (!a.intensity.empty()) spec.inclusion_intensity = parse_range<double>(a.intensity, "--intensity");
  if (a.noise >= 0.0) spec.background_noise_std = a.noise;
  spec.validate();

  const fs::path root(a.out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!a.force) {
      throw IoError("output directory " + root.string() + " is not empty; pass --force to overwrite");
    }
    for (const auto& entry : fs::directory_iterator(root)) {
      const auto name = entry.path().filename();
      if ((entry.is_directory() && fs::is_directory(entry.path() / "slices")) || name == "annotations.json" ||
          name == "synth-config.json" || name == "run-config.json") {
        fs::remove_all(entry.path());
      }
    }
  }
  prepare_out_dir(root);

  const auto bits = parse_bit_depth(a.bit_depth);
  const auto samples = generate_synthetic(spec);
  std::vector<BoxAnnotation> boxes;
  std::int64_t slices = 0;
  for (const auto& s : samples) {
    write_sample(root, s, bits);
    const auto found = extract_boxes(s.mask);
    boxes.insert(boxes.end(), found.begin(), found.end());
    slices += s.volume.slice_count();
  }
  save_annotations(root / "annotations.json", boxes);
  json cfg = {{"synthetic", spec}, {"bit_depth", a.bit_depth}};
  write_file_atomic(root / "synth-config.json", cfg.dump(2) + "\n");
  // Starting point for `train --config`: full-frame transform for this geometry.
  RunConfig run_cfg;
  run_cfg.data_root = root;
  run_cfg.bit_depth = bits;
  run_cfg.transform.target_width = spec.width;
  run_cfg.transform.crop_height = spec.height;
  run_cfg.transform.crop_width = spec.width;
  auto run_json = to_json(run_cfg);
  run_json.erase("out_dir");
  run_json.erase("weights");
  write_file_atomic(root / "run-config.json", run_json.dump(2) + "\n");
  out << fmt::format("wrote {} volumes, {} slices, {} inclusions to {}\n", samples.size(), slices, boxes.size(),
                     root.string());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  int loss = 0;
  std::uint64_t seed = 0;
  std::int64_t max_epochs = 0;
  std::int64_t batch_size = 0;
  std::int64_t patience = 0;
  double lr = -1.0;
  double threshold = -1.0;
  std::string split;
  std::string split_counts;
  std::uint64_t split_seed = 0;
  std::string weights;
  int bit_depth = 0;
  std::string crop;
  std::int64_t target_width = 0;
  bool train_all = false;
};

RunConfig resolve_train_config(const TrainArgs& a, CLI::App& sub) {
  RunConfig c;
  if (!a.config.empty()) merge_json(read_json_file(a.config), c);
  if (!a.data.empty()) c.data_root = a.data;
  if (!a.out.empty()) c.out_dir = a.out;
  if (a.loss != 0) c.train.loss = LossConfig::preset(a.loss);
  if (sub.count("--seed")) c.train.seed = a.seed;
  if (a.max_epochs > 0) c.train.max_epochs = a.max_epochs;
  if (a.batch_size > 0) c.train.batch_size = a.batch_size;
  if (a.patience > 0) c.train.patience = a.patience;
  if (a.lr >= 0.0) c.train.learning_rate = a.lr;
  if (a.threshold >= 0.0) c.train.threshold = a.threshold;
  if (!a.split.empty()) c.split_file = a.split;
  if (!a.split_counts.empty()) c.split_counts = parse_counts(a.split_counts);
  if (sub.count("--split-seed")) c.split_seed = a.split_seed;
  if (!a.weights.empty()) c.weights = a.weights;
  if (a.bit_depth != 0) c.bit_depth = parse_bit_depth(a.bit_depth);
  if (a.target_width > 0) c.transform.target_width = a.target_width;
  if (!a.crop.empty()) {
    const auto x = a.crop.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument("no separator");
      c.transform.crop_height = std::stoll(a.crop.substr(0, x));
      c.transform.crop_width = std::stoll(a.crop.substr(x + 1));
    } catch (const std::exception&) {
      throw ConfigError("--crop must be HEIGHTxWIDTH, got '" + a.crop + "'");
    }
  }

  if (c.data_root.empty()) throw ConfigError("train: no data root (--data or data_root in the config)");
  if (c.out_dir.empty()) throw ConfigError("train: no output directory (--out or out_dir in the config)");
  if (!fs::is_directory(c.data_root)) throw IoError("data root does not exist: " + c.data_root.string());
  if (c.split_file && !fs::exists(*c.split_file)) throw IoError("split file does not exist: " + c.split_file->string());
  if (c.weights && !fs::exists(*c.weights)) throw IoError("weights file does not exist: " + c.weights->string());
  c.train.validate();
  c.model.validate();
  c.transform.validate();
  return c;
}

DatasetSplit resolve_split(RunConfig& c, const std::vector<std::string>& ids) {
  if (c.split_file) return load_split(*c.split_file);
  if (!c.split_counts) c.split_counts = default_split_counts(ids.size());
  return split_dataset(ids, *c.split_counts, c.split_seed);
}

Checkpoint run_fit(const RunConfig& c, std::span<const Sample> samples, const DatasetSplit& split,
                   const fs::path& out_dir, const std::optional<Parameters>& initial, std::ostream& out) {
  prepare_out_dir(out_dir);
  auto resolved = to_json(c);
  resolved["out_dir"] = out_dir.string();
  write_file_atomic(out_dir / "resolved-config.json", resolved.dump(2) + "\n");
  save_split(out_dir / "split.json", split);

  FitOptions options;
  options.initial_params = initial;
  options.on_epoch = [&out, &c](const EpochRecord& r) {
    out << fmt::format("[loss {}] epoch {:3d}  train {:.5f}  val {:.5f}  dsc {:.4f}  prec {:.4f}  rec {:.4f}  ({:.1f}s)\n",
                       c.train.loss.id, r.epoch, r.train_loss, r.val_loss, r.dsc, r.precision, r.recall, r.seconds);
    out.flush();
  };
  auto result = fit(samples, split, c.transform, c.model, c.train, out_dir, options);
  out << fmt::format("best epoch {} (val loss {:.6f}); {} epochs run; checkpoint {}\n", result.best.epoch,
                     result.best.val_loss, result.history.size(), (out_dir / "best.ckpt").string());
  return result.best;
}

std::vector<Sample> pick(std::span<const Sample> samples, const std::vector<std::string>& ids) {
  std::vector<Sample> out;
  for (const auto& id : ids) {
    for (const auto& s : samples)
      if (s.volume.id == id) out.push_back(s);
  }
  return out;
}

int cmd_train(const TrainArgs& a, CLI::App& sub, std::ostream& out) {
  auto c = resolve_train_config(a, sub);
  const auto ids = list_volume_ids(c.data_root);
  auto split = resolve_split(c, ids);

  std::optional<Parameters> initial;
  if (c.weights) {
    auto ckpt = load_checkpoint(*c.weights);
    if (!(ckpt.config == c.model)) {
      out << "note: model config taken from --weights checkpoint\n";
      c.model = ckpt.config;
    }
    initial = std::move(ckpt.params);
  }

  std::vector<std::string> needed;
  for (const auto* part : {&split.train_ids, &split.val_ids, &split.test_ids})
    needed.insert(needed.end(), part->begin(), part->end());
  const auto samples = load_samples(c.data_root, needed, c.bit_depth);

  if (!a.train_all) {
    run_fit(c, samples, split, c.out_dir, initial, out);
    return 0;
  }

  // Five-preset grid with a comparison table on the validation and test sets.
  std::vector<TableRow> val_rows;
  std::vector<TableRow> test_rows;
  json comparison = json::array();
  const auto val_set = pick(samples, split.val_ids);
  const auto test_set = pick(samples, split.test_ids);
  for (int id = 1; id <= 5; ++id) {
    auto run_cfg = c;
    run_cfg.train.loss = LossConfig::preset(id);
    const auto dir = c.out_dir / fmt::format("loss_{}", id);
    const auto best = run_fit(run_cfg, samples, split, dir, initial, out);
    const auto model = make_model(best);
    auto val_report = evaluate_set(model, val_set, c.transform, c.train.threshold);
    auto test_report = evaluate_set(model, test_set, c.transform, c.train.threshold);
    val_report.loss_config_id = test_report.loss_config_id = id;
    val_report.checkpoint = test_report.checkpoint = (dir / "best.ckpt").string();
    write_file_atomic(dir / "metrics_val.json", to_json(val_report).dump(2) + "\n");
    write_file_atomic(dir / "metrics.json", to_json(test_report).dump(2) + "\n");
    val_rows.push_back(table_row(val_report, false));
    test_rows.push_back(table_row(test_report, true));
    comparison.push_back({{"loss_config_id", id}, {"val", to_json(val_report)}, {"test", to_json(test_report)}});
  }
  write_file_atomic(c.out_dir / "comparison.json", comparison.dump(2) + "\n");
  out << "\nValidation set\n" << format_metrics_table(val_rows);
  out << "\nTest set (inference seconds per volume)\n" << format_metrics_table(test_rows);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split;
  std::string section = "test";
  std::string out;
  std::string config;
  double threshold = 0.5;
  int bit_depth = 8;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  auto transform = ckpt.transform;
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    if (j.contains("transform")) from_json(j.at("transform"), transform);
  }
  fs::path split_path = a.split;
  if (split_path.empty()) split_path = fs::path(a.checkpoint).parent_path() / "split.json";
  if (!fs::exists(split_path)) throw IoError("split file does not exist: " + split_path.string());
  const auto split = load_split(split_path);
  const std::vector<std::string>* ids = nullptr;
  if (a.section == "train") ids = &split.train_ids;
  if (a.section == "val") ids = &split.val_ids;
  if (a.section == "test") ids = &split.test_ids;
  if (!ids) throw ConfigError("--section must be train, val or test");
  if (ids->empty()) throw ConfigError("split section '" + a.section + "' is empty");

  const auto samples = load_samples(a.data, *ids, parse_bit_depth(a.bit_depth));
  const auto model = make_model(ckpt);
  auto report = evaluate_set(model, samples, transform, a.threshold);
  report.loss_config_id = ckpt.loss_config_id;
  report.checkpoint = a.checkpoint;

  const fs::path out_dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  prepare_out_dir(out_dir);
  write_file_atomic(out_dir / "metrics.json", to_json(report).dump(2) + "\n");
  for (const auto& v : report.per_volume) {
    out << fmt::format("{:>12}  dsc {:.4f}  precision {:.4f}  recall {:.4f}  {:.3f}s ({:.4f}s/slice)\n", v.volume_id,
                       v.dsc, v.precision, v.recall, v.seconds_total, v.seconds_per_slice);
  }
  const TableRow row = table_row(report, true);
  out << format_metrics_table(std::span<const TableRow>(&row, 1));
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint;
  std::string volume;
  std::string out;
  double threshold = 0.5;
  int bit_depth = 8;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto dir = slice_dir_of(a.volume);
  const auto files = list_slice_files(dir);
  const auto volume = load_volume(dir, parse_bit_depth(a.bit_depth));
  const auto model = make_model(ckpt);
  const auto pred = predict_volume(model, volume, ckpt.transform, a.threshold);
  prepare_out_dir(a.out);
  std::int64_t positives = 0;
  for (std::int64_t s = 0; s < volume.slice_count(); ++s) {
    const auto view = pred.labels.outer(s);
    Tensor<std::uint8_t> slice({pred.labels.dim(1), pred.labels.dim(2)},
                               std::vector<std::uint8_t>(view.begin(), view.end()));
    const auto native = restore_mask(slice, ckpt.transform, volume.height(), volume.width());
    for (auto v : native.values()) positives += v;
    write_mask_png(fs::path(a.out) / files[static_cast<std::size_t>(s)].filename(), native);
  }
  out << fmt::format("wrote {} prediction masks ({} positive pixels) to {}\n", volume.slice_count(), positives, a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// overlay

struct OverlayArgs {
  std::string volume;
  std::string mask;
  std::string gt;
  std::string out;
  int bit_depth = 8;
};

/// Grayscale slice as RGB with labelled pixels tinted: red for predictions,
/// green for ground truth.
Tensor<std::uint8_t> render_overlay(const Tensor<float>& image, const Tensor<std::uint8_t>& labels, int channel) {
  const auto h = image.dim(0), w = image.dim(1);
  Tensor<std::uint8_t> rgb({h, w, 3});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(image.at(y, x), 0.0f, 1.0f) * 255.0f));
      for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = g;
      if (labels.at(y, x)) {
        for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = static_cast<std::uint8_t>(g / 2);
        rgb.at(y, x, channel) = 255;
      }
    }
  }
  return rgb;
}

int cmd_overlay(const OverlayArgs& a, std::ostream& out) {
  const auto bits = parse_bit_depth(a.bit_depth);
  const auto dir = slice_dir_of(a.volume);
  const auto files = list_slice_files(dir);
  const auto volume = load_volume(dir, bits);
  const auto mask = load_mask_volume(a.mask, volume.id);
  if (mask.labels.shape() != volume.slices.shape()) {
    throw ShapeError("mask stack " + shape_to_string(mask.labels.shape()) + " is not aligned with volume " +
                     shape_to_string(volume.slices.shape()));
  }
  std::optional<MaskVolume> gt;
  if (!a.gt.empty()) {
    gt = load_mask_volume(a.gt, volume.id);
    if (gt->labels.shape() != volume.slices.shape()) {
      throw ShapeError("ground-truth stack " + shape_to_string(gt->labels.shape()) + " is not aligned with volume " +
                       shape_to_string(volume.slices.shape()));
    }
  }
  prepare_out_dir(a.out);
  for (std::int64_t s = 0; s < volume.slice_count(); ++s) {
    const auto image = volume.slice(s);
    auto pred_panel = render_overlay(image, mask.slice(s), 0);
    Tensor<std::uint8_t> canvas = pred_panel;
    if (gt) {
      // Ground truth on the left, prediction on the right.
      const auto gt_panel = render_overlay(image, gt->slice(s), 1);
      const auto h = image.dim(0), w = image.dim(1);
      canvas = Tensor<std::uint8_t>({h, 2 * w, 3});
      for (std::int64_t y = 0; y < h; ++y) {
        std::copy_n(&gt_panel.at(y, 0, 0), w * 3, &canvas.at(y, 0, 0));
        std::copy_n(&pred_panel.at(y, 0, 0), w * 3, &canvas.at(y, w, 0));
      }
    }
    write_rgb_png(fs::path(a.out) / files[static_cast<std::size_t>(s)].filename(), canvas);
  }
  out << fmt::format("wrote {} overlays to {}\n", volume.slice_count(), a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string checkpoint;
  std::string volume;
  std::string out;
  int repeats = 5;
  double threshold = 0.5;
  int bit_depth = 8;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto volume = load_volume(slice_dir_of(a.volume), parse_bit_depth(a.bit_depth));
  const auto model = make_model(ckpt);
  const auto summary = benchmark_inference(model, volume, ckpt.transform, a.repeats, a.threshold);
  auto j = to_json(summary);
  j["volume"] = volume.id;
  j["volume_shape"] = volume.slices.shape();
  j["checkpoint"] = a.checkpoint;
  j["reference"] = {{"seconds_per_slice", kReferenceSecondsPerSlice},
                    {"seconds_per_volume", kReferenceSecondsPerVolume},
                    {"volume_shape", {700, 1024, 700}},
                    {"note", "published full-size figure on datacenter GPUs; context only"}};
  const fs::path out_dir = a.out.empty() ? fs::path(".") : fs::path(a.out);
  prepare_out_dir(out_dir);
  write_file_atomic(out_dir / "bench.json", j.dump(2) + "\n");
  out << fmt::format("volume {} ({} slices), {} timed passes after one warm-up\n", volume.id, summary.slice_count,
                     summary.repeats);
  out << fmt::format("seconds_total     min {:.4f}  mean {:.4f}  max {:.4f}\n", summary.min_total, summary.mean_total,
                     summary.max_total);
  out << fmt::format("seconds_per_slice min {:.5f}  mean {:.5f}  max {:.5f}\n", summary.min_per_slice,
                     summary.mean_per_slice, summary.max_per_slice);
  out << "host: " << summary.host << "\n";
  out << fmt::format("reference (context only): {:.3f} s/slice, {:.2f} s/volume on datacenter GPUs\n",
                     kReferenceSecondsPerSlice, kReferenceSecondsPerVolume);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inclusion-defect segmentation for OCT volumes", "octseg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--out", synth.out, "Dataset root to create")->required();
  s->add_option("--config", synth.config, "JSON file with a 'synthetic' section");
  s->add_option("--volumes", synth.volumes, "Number of volumes");
  s->add_option("--slices", synth.slices, "Slices per volume");
  s->add_option("--height", synth.height, "Slice height (divisible by 32)");
  s->add_option("--width", synth.width, "Slice width (divisible by 32)");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--inclusions", synth.inclusions, "Inclusions per volume: n or min,max");
  s->add_option("--radius", synth.radius, "Inclusion half-max radius in pixels: r or min,max");
  s->add_option("--intensity", synth.intensity, "Inclusion peak amplitude: a or min,max");
  s->add_option("--noise", synth.noise, "Speckle standard deviation");
  s->add_option("--bit-depth", synth.bit_depth, "PNG bit depth (8 or 16)");
  s->add_flag("--force", synth.force, "Overwrite an existing dataset");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a U-Net");
  t->add_option("--config", train.config, "Run config JSON");
  t->add_option("--data", train.data, "Dataset root");
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--loss", train.loss, "Loss preset 1..5")->check(CLI::Range(1, 5));
  t->add_option("--seed", train.seed, "Initialization and shuffling seed");
  t->add_option("--max-epochs", train.max_epochs, "Epoch budget");
  t->add_option("--batch-size", train.batch_size, "Mini-batch size");
  t->add_option("--patience", train.patience, "Early stopping patience");
  t->add_option("--lr", train.lr, "Adam learning rate");
  t->add_option("--threshold", train.threshold, "Probability threshold for validation metrics");
  t->add_option("--split", train.split, "Split JSON file");
  t->add_option("--split-counts", train.split_counts, "train,val,test volume counts");
  t->add_option("--split-seed", train.split_seed, "Seed for the volume split");
  t->add_option("--weights", train.weights, "Checkpoint to start from");
  t->add_option("--bit-depth", train.bit_depth, "PNG bit depth (8 or 16)");
  t->add_option("--crop", train.crop, "Crop window HEIGHTxWIDTH");
  t->add_option("--target-width", train.target_width, "Width after centered padding");
  t->add_flag("--train-all", train.train_all, "Train all five loss presets and compare them");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on one split section");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Dataset root")->required();
  e->add_option("--split", eval.split, "Split JSON (default: split.json next to the checkpoint)");
  e->add_option("--section", eval.section, "train, val or test");
  e->add_option("--out", eval.out, "Directory for metrics.json");
  e->add_option("--config", eval.config, "Run config JSON overriding the checkpoint's transform");
  e->add_option("--threshold", eval.threshold, "Probability threshold");
  e->add_option("--bit-depth", eval.bit_depth, "PNG bit depth (8 or 16)");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write binary prediction masks for a volume");
  p->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
  p->add_option("--volume", predict.volume, "Volume directory")->required();
  p->add_option("--out", predict.out, "Output directory")->required();
  p->add_option("--threshold", predict.threshold, "Probability threshold");
  p->add_option("--bit-depth", predict.bit_depth, "PNG bit depth (8 or 16)");

  OverlayArgs overlay;
  auto* o = app.add_subcommand("overlay", "Render masks over the B-scans");
  o->add_option("--volume", overlay.volume, "Volume directory")->required();
  o->add_option("--mask", overlay.mask, "Mask or prediction directory")->required();
  o->add_option("--gt", overlay.gt, "Ground-truth directory for a side-by-side panel");
  o->add_option("--out", overlay.out, "Output directory")->required();
  o->add_option("--bit-depth", overlay.bit_depth, "PNG bit depth (8 or 16)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time inference on one volume");
  b->add_option("--checkpoint", bench.checkpoint, "Checkpoint file")->required();
  b->add_option("--volume", bench.volume, "Volume directory")->required();
  b->add_option("--repeats", bench.repeats, "Timed passes")->check(CLI::PositiveNumber);
  b->add_option("--out", bench.out, "Directory for bench.json");
  b->add_option("--threshold", bench.threshold, "Probability threshold");
  b->add_option("--bit-depth", bench.bit_depth, "PNG bit depth (8 or 16)");

  std::vector<std::string> argv_store{"octseg"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return ex.get_exit_code() == 0 ? 2 : ex.get_exit_code();
  }

  try {
    if (s->parsed()) return cmd_synth(synth, *s, out);
    if (t->parsed()) return cmd_train(train, *t, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (p->parsed()) return cmd_predict(predict, out);
    if (o->parsed()) return cmd_overlay(overlay, out);
    if (b->parsed()) return cmd_bench(bench, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace octseg::cli
