#include "octseg/eval.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <sys/utsname.h>

namespace octseg {

using nlohmann::json;

template <typename T>
Tensor<std::uint8_t> binarize(const Tensor<T>& probs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ConfigError("threshold " + std::to_string(tau) + " lies outside [0, 1]");
  }
  Tensor<std::uint8_t> out(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = static_cast<double>(probs[i]) > tau ? 1 : 0;
  return out;
}

template Tensor<std::uint8_t> binarize(const Tensor<float>&, double);
template Tensor<std::uint8_t> binarize(const Tensor<double>&, double);
template Tensor<std::uint8_t> binarize(const Tensor<std::uint8_t>&, double);

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion_counts: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

ConfusionCounts confusion_counts(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("confusion_counts: prediction " + shape_to_string(pred.shape()) + " vs ground truth " +
                     shape_to_string(gt.shape()));
  }
  return confusion_counts(pred.values(), gt.values());
}

SegmentationScores metrics_from_counts(const ConfusionCounts& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return {1.0, 1.0, 1.0};
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  SegmentationScores s;
  s.dsc = 2.0 * tp / (2.0 * tp + fp + fn);
  s.precision = c.tp + c.fp > 0 ? tp / (tp + fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? tp / (tp + fn) : 0.0;
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

VolumePrediction predict_volume(const UNet<float>& model, const Volume& volume, const TransformSpec& transform,
                                double tau) {
  const auto geometry = plan_transform(transform, volume.height(), volume.width());
  const auto S = volume.slice_count();
  const auto h = geometry.out_height;
  const auto w = geometry.out_width;
  const auto C = model.config().in_channels;
  // Padding is not part of the scan.
  std::vector<std::int64_t> pad_cols;
  for (std::int64_t x = 0; x < w; ++x)
    if (geometry.is_padding(x)) pad_cols.push_back(x);

  VolumePrediction result;
  result.labels = Tensor<std::uint8_t>({S, h, w});
  Tensor<float> input({1, C, h, w});
  const auto t0 = Clock::now();
  for (std::int64_t s = 0; s < S; ++s) {
    const auto image = transform_image(volume.slice(s), transform);
    for (std::int64_t c = 0; c < C; ++c) {
      std::copy(image.values().begin(), image.values().end(), input.data() + c * h * w);
    }
    const auto labels = binarize(predict_proba(model, input), tau);
    auto dst = result.labels.outer(s);
    std::copy(labels.values().begin(), labels.values().end(), dst.begin());
    for (std::int64_t y = 0; y < h; ++y)
      for (auto x : pad_cols) dst[static_cast<std::size_t>(y * w + x)] = 0;
  }
  result.seconds_total = seconds_since(t0);
  return result;
}

VolumeMetrics score_volume(const std::string& volume_id, const Tensor<std::uint8_t>& prediction,
                           const MaskVolume& mask, const TransformSpec& transform) {
  const auto S = mask.slice_count();
  if (prediction.rank() != 3 || prediction.dim(0) != S) {
    throw ShapeError("prediction stack " + shape_to_string(prediction.shape()) + " does not match mask " +
                     shape_to_string(mask.labels.shape()));
  }
  VolumeMetrics m;
  m.volume_id = volume_id;
  m.slice_count = S;
  for (std::int64_t s = 0; s < S; ++s) {
    const auto gt = transform_mask(mask.slice(s), transform);
    const auto pred = prediction.outer(s);
    if (pred.size() != gt.size()) throw ShapeError("prediction slice does not match transformed mask");
    m.counts += confusion_counts(pred, gt.values());
  }
  const auto scores = metrics_from_counts(m.counts);
  m.dsc = scores.dsc;
  m.precision = scores.precision;
  m.recall = scores.recall;
  return m;
}

VolumeMetrics evaluate_volume(const UNet<float>& model, const Volume& volume, const MaskVolume& mask,
                              const TransformSpec& transform, double tau) {
  if (volume.slices.shape() != mask.labels.shape()) {
    throw ShapeError("volume '" + volume.id + "' " + shape_to_string(volume.slices.shape()) +
                     " and mask " + shape_to_string(mask.labels.shape()) + " are not aligned");
  }
  const auto pred = predict_volume(model, volume, transform, tau);
  auto m = score_volume(volume.id, pred.labels, mask, transform);
  m.seconds_total = pred.seconds_total;
  m.seconds_per_slice = m.slice_count > 0 ? pred.seconds_total / static_cast<double>(m.slice_count) : 0.0;
  return m;
}

void finalize_means(MetricsReport& report) {
  if (report.per_volume.empty()) throw ConfigError("metrics report has no volumes");
  const auto n = static_cast<double>(report.per_volume.size());
  double dsc = 0.0, precision = 0.0, recall = 0.0;
  for (const auto& v : report.per_volume) {
    dsc += v.dsc;
    precision += v.precision;
    recall += v.recall;
  }
  report.mean_dsc = dsc / n;
  report.mean_precision = precision / n;
  report.mean_recall = recall / n;
}

MetricsReport evaluate_set(const UNet<float>& model, std::span<const Sample> samples,
                           const TransformSpec& transform, double tau) {
  if (samples.empty()) throw ConfigError("evaluate_set needs at least one volume");
  MetricsReport report;
  for (const auto& s : samples) report.per_volume.push_back(evaluate_volume(model, s.volume, s.mask, transform, tau));
  finalize_means(report);
  return report;
}

TimingSummary benchmark_inference(const UNet<float>& model, const Volume& volume, const TransformSpec& transform,
                                  int repeats, double tau) {
  if (repeats < 1) throw ConfigError("benchmark repeats must be >= 1");
  TimingSummary t;
  t.repeats = repeats;
  t.slice_count = volume.slice_count();
  t.host = host_descriptor();
  predict_volume(model, volume, transform, tau);  // warm-up
  for (int r = 0; r < repeats; ++r) t.seconds_total.push_back(predict_volume(model, volume, transform, tau).seconds_total);
  const auto [lo, hi] = std::minmax_element(t.seconds_total.begin(), t.seconds_total.end());
  t.min_total = *lo;
  t.max_total = *hi;
  t.mean_total = std::accumulate(t.seconds_total.begin(), t.seconds_total.end(), 0.0) / repeats;
  const auto slices = static_cast<double>(std::max<std::int64_t>(1, t.slice_count));
  t.min_per_slice = t.min_total / slices;
  t.mean_per_slice = t.mean_total / slices;
  t.max_per_slice = t.max_total / slices;
  return t;
}

std::string host_descriptor() {
  std::string os = "unknown-os";
  utsname info{};
  if (uname(&info) == 0) os = std::string(info.sysname) + " " + info.release + " " + info.machine;
  std::string cpu = "unknown-cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return fmt::format("{}; {}; {} hardware threads", os, cpu, std::thread::hardware_concurrency());
}

json to_json(const MetricsReport& report) {
  json per_volume = json::array();
  for (const auto& v : report.per_volume) {
    per_volume.push_back({{"volume_id", v.volume_id},
                          {"dsc", v.dsc},
                          {"precision", v.precision},
                          {"recall", v.recall},
                          {"seconds_total", v.seconds_total},
                          {"seconds_per_slice", v.seconds_per_slice},
                          {"slice_count", v.slice_count},
                          {"tp", v.counts.tp},
                          {"fp", v.counts.fp},
                          {"fn", v.counts.fn},
                          {"tn", v.counts.tn}});
  }
  return {{"loss_config_id", report.loss_config_id},
          {"checkpoint", report.checkpoint},
          {"per_volume", per_volume},
          {"mean_dsc", report.mean_dsc},
          {"mean_precision", report.mean_precision},
          {"mean_recall", report.mean_recall},
          {"timing_scope", "preprocess + forward + threshold, sequential, excludes disk I/O and model load"}};
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  r.loss_config_id = j.value("loss_config_id", 0);
  r.checkpoint = j.value("checkpoint", std::string{});
  for (const auto& v : j.at("per_volume")) {
    VolumeMetrics m;
    m.volume_id = v.at("volume_id").get<std::string>();
    m.dsc = v.at("dsc").get<double>();
    m.precision = v.at("precision").get<double>();
    m.recall = v.at("recall").get<double>();
    m.seconds_total = v.at("seconds_total").get<double>();
    m.seconds_per_slice = v.at("seconds_per_slice").get<double>();
    m.slice_count = v.value("slice_count", std::int64_t{0});
    m.counts = {v.value("tp", std::int64_t{0}), v.value("fp", std::int64_t{0}), v.value("fn", std::int64_t{0}),
                v.value("tn", std::int64_t{0})};
    r.per_volume.push_back(std::move(m));
  }
  r.mean_dsc = j.at("mean_dsc").get<double>();
  r.mean_precision = j.at("mean_precision").get<double>();
  r.mean_recall = j.at("mean_recall").get<double>();
  return r;
}

json to_json(const TimingSummary& t) {
  return {{"repeats", t.repeats},
          {"slice_count", t.slice_count},
          {"samples_seconds_total", t.seconds_total},
          {"seconds_total", {{"min", t.min_total}, {"mean", t.mean_total}, {"max", t.max_total}}},
          {"seconds_per_slice", {{"min", t.min_per_slice}, {"mean", t.mean_per_slice}, {"max", t.max_per_slice}}},
          {"host", t.host},
          {"timing_scope", "preprocess + forward + threshold, sequential, one untimed warm-up pass"}};
}

TableRow table_row(const MetricsReport& report, bool with_timing) {
  TableRow row{report.loss_config_id, report.mean_dsc, report.mean_precision, report.mean_recall, -1.0};
  if (with_timing && !report.per_volume.empty()) {
    double total = 0.0;
    for (const auto& v : report.per_volume) total += v.seconds_total;
    row.inference_seconds = total / static_cast<double>(report.per_volume.size());
  }
  return row;
}

std::string format_metrics_table(std::span<const TableRow> rows) {
  const bool timing = std::any_of(rows.begin(), rows.end(), [](const TableRow& r) { return r.inference_seconds >= 0; });
  std::string out = fmt::format("{:>9} | {:>6} | {:>9} | {:>6}", "N. Train", "DSC", "Precision", "Recall");
  if (timing) out += fmt::format(" | {:>13}", "Inference (s)");
  out += '\n';
  out += std::string(out.size() - 1, '-') + '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:>9} | {:>6.3f} | {:>9.3f} | {:>6.3f}", r.run, r.dsc, r.precision, r.recall);
    if (timing) out += r.inference_seconds >= 0 ? fmt::format(" | {:>13.3f}", r.inference_seconds) : fmt::format(" | {:>13}", "-");
    out += '\n';
  }
  return out;
}

}  // namespace octseg
