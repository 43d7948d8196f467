#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "octseg/data.hpp"
#include "octseg/model.hpp"
#include "octseg/preprocess.hpp"
#include "octseg/tensor.hpp"

namespace octseg {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct SegmentationScores {
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// 1 where prob > tau (strictly), else 0. tau must lie in [0, 1].
template <typename T>
Tensor<std::uint8_t> binarize(const Tensor<T>& probs, double tau = 0.5);

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
ConfusionCounts confusion_counts(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt);

/// DSC 2tp/(2tp+fp+fn), precision tp/(tp+fp), recall tp/(tp+fn). Empty
/// prediction against empty truth scores 1 on all three; otherwise a zero
/// denominator scores 0.
SegmentationScores metrics_from_counts(const ConfusionCounts& c);

struct VolumeMetrics {
  std::string volume_id;
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double seconds_total = 0.0;
  double seconds_per_slice = 0.0;
  std::int64_t slice_count = 0;
  ConfusionCounts counts;
};

struct MetricsReport {
  std::vector<VolumeMetrics> per_volume;
  double mean_dsc = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  int loss_config_id = 0;
  std::string checkpoint;
};

/// Thresholded predictions for every slice of a volume in transformed
/// geometry (S x h x w). Padded columns are never predicted positive.
struct VolumePrediction {
  Tensor<std::uint8_t> labels;
  double seconds_total = 0.0;
};

/// Preprocess, forward and threshold each slice sequentially; the reported
/// time covers exactly those three steps.
VolumePrediction predict_volume(const UNet<float>& model, const Volume& volume, const TransformSpec& transform,
                                double tau = 0.5);

/// Pools confusion counts over all slices of the volume, then scores once.
VolumeMetrics evaluate_volume(const UNet<float>& model, const Volume& volume, const MaskVolume& mask,
                              const TransformSpec& transform, double tau = 0.5);
/// Scores an existing prediction stack against the transformed mask.
VolumeMetrics score_volume(const std::string& volume_id, const Tensor<std::uint8_t>& prediction,
                           const MaskVolume& mask, const TransformSpec& transform);

MetricsReport evaluate_set(const UNet<float>& model, std::span<const Sample> samples,
                           const TransformSpec& transform, double tau = 0.5);
/// Fills the unweighted means over volumes.
void finalize_means(MetricsReport& report);

struct TimingSummary {
  int repeats = 0;
  std::int64_t slice_count = 0;
  std::vector<double> seconds_total;  // one entry per timed pass
  double min_total = 0.0;
  double mean_total = 0.0;
  double max_total = 0.0;
  double min_per_slice = 0.0;
  double mean_per_slice = 0.0;
  double max_per_slice = 0.0;
  std::string host;
};

/// One untimed warm-up pass, then `repeats` timed passes of predict_volume.
TimingSummary benchmark_inference(const UNet<float>& model, const Volume& volume, const TransformSpec& transform,
                                  int repeats, double tau = 0.5);

/// OS, CPU model and hardware thread count of this machine.
std::string host_descriptor();

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TimingSummary& summary);

struct TableRow {
  int run = 0;
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double inference_seconds = -1.0;  // negative: column omitted
};

TableRow table_row(const MetricsReport& report, bool with_timing);
/// Renders rows as "N. Train | DSC | Precision | Recall [| Inference (s)]".
std::string format_metrics_table(std::span<const TableRow> rows);

}  // namespace octseg
