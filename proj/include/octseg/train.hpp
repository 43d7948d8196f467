#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "octseg/checkpoint.hpp"
#include "octseg/data.hpp"
#include "octseg/eval.hpp"
#include "octseg/loss.hpp"
#include "octseg/model.hpp"

namespace octseg {

struct TrainConfig {
  std::int64_t batch_size = 16;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t patience = 15;
  std::int64_t max_epochs = 100;
  LossConfig loss = LossConfig::preset(4);
  std::uint64_t seed = 0;
  double threshold = 0.5;

  void validate() const;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double seconds = 0.0;

  /// Equality ignores the wall-clock field.
  bool same_outcome(const EpochRecord& o) const {
    return epoch == o.epoch && train_loss == o.train_loss && val_loss == o.val_loss && dsc == o.dsc &&
           precision == o.precision && recall == o.recall;
  }
};

struct TrainState {
  explicit TrainState(UNet<float> net);

  UNet<float> model;
  Parameters adam_m;
  Parameters adam_v;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::int64_t epochs_since_improve = 0;
  std::vector<EpochRecord> history;
};

/// One bias-corrected Adam step over a flat array; `step` is the 1-based
/// step number after incrementing.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t step,
               double learning_rate, double beta1, double beta2, double eps);

/// Applies Adam to every trainable array. Non-finite gradients abort with the
/// array name and step before anything is modified.
void adam_update(TrainState& state, const Parameters& grads, const TrainConfig& config);

using BatchSource = std::function<std::optional<Batch>()>;

/// Train-mode pass over every batch with one Adam update each. Returns the
/// mean of the per-batch losses; `batch_losses` receives them when non-null.
double train_epoch(TrainState& state, const BatchSource& next, const TrainConfig& config,
                   std::vector<double>* batch_losses = nullptr);
double train_epoch(TrainState& state, std::span<const Batch> batches, const TrainConfig& config,
                   std::vector<double>* batch_losses = nullptr);

struct ValidationResult {
  double val_loss = 0.0;
  SegmentationScores scores;  // per-volume pooled counts, averaged over volumes
};

/// Eval-mode loss and thresholded metrics; never touches the model.
ValidationResult validate(const TrainState& state, const BatchSource& next, const TrainConfig& config);
ValidationResult validate(const TrainState& state, std::span<const Batch> batches, const TrainConfig& config);

/// Strict-improvement early stopping on the validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::int64_t patience);

  struct Decision {
    bool improved = false;
    bool stop = false;
  };
  Decision update(double val_loss);

  double best() const { return best_; }
  std::int64_t best_epoch() const { return best_epoch_; }
  std::int64_t epochs_since_improve() const { return since_improve_; }

 private:
  std::int64_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::int64_t best_epoch_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t since_improve_ = 0;
};

struct FitResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
};

struct FitOptions {
  /// Starting weights; seeded random init when empty.
  std::optional<Parameters> initial_params;
  /// Called after every epoch (progress reporting).
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains on split.train_ids, validates on split.val_ids after every epoch,
/// writes `best.ckpt` whenever the validation loss strictly improves and
/// rewrites `history.json` each epoch.
FitResult fit(std::span<const Sample> samples, const DatasetSplit& split, const TransformSpec& transform,
              const ModelConfig& model_config, const TrainConfig& train_config,
              const std::filesystem::path& out_dir, const FitOptions& options = {});

void save_history(const std::filesystem::path& path, std::span<const EpochRecord> history);
std::vector<EpochRecord> load_history(const std::filesystem::path& path);

}  // namespace octseg
