#include "octseg/train.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "octseg/config_io.hpp"

namespace octseg {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  loss.validate();
}

TrainState::TrainState(UNet<float> net)
    : model(std::move(net)), adam_m(model.params().zeros_like()), adam_v(model.params().zeros_like()) {}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t step,
               double learning_rate, double beta1, double beta2, double eps) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) - learning_rate * m_hat / (std::sqrt(v_hat) + eps));
  }
}

template void adam_step(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                        std::int64_t, double, double, double, double);
template void adam_step(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                        std::int64_t, double, double, double, double);

void adam_update(TrainState& state, const Parameters& grads, const TrainConfig& config) {
  auto& params = state.model.params();
  if (grads.size() != params.size()) throw ShapeError("gradient set does not mirror the parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].values.size() != params[i].values.size() || grads[i].name != params[i].name) {
      throw ShapeError("gradient '" + grads[i].name + "' does not mirror parameter '" + params[i].name + "'");
    }
    if (!params[i].trainable) continue;
    for (float g : grads[i].values) {
      if (!std::isfinite(g)) {
        throw NumericError(fmt::format("non-finite gradient in '{}' at step {}", grads[i].name, state.step + 1));
      }
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    adam_step<float>(params[i].values, grads[i].values, state.adam_m[i].values, state.adam_v[i].values, state.step,
                     config.learning_rate, config.beta1, config.beta2, config.adam_eps);
  }
}

double train_epoch(TrainState& state, const BatchSource& next, const TrainConfig& config,
                   std::vector<double>* batch_losses) {
  double sum = 0.0;
  std::size_t count = 0;
  while (auto batch = next()) {
    ForwardTape<float> tape;
    const auto logits = state.model.forward(batch->images, Mode::train, &tape);
    Tensor<float> grad(logits.shape());
    const double loss =
        combined_loss_with_grad<float>(config.loss, logits.values(), batch->masks.values(), grad.values());
    const auto grads = state.model.backward(tape, grad);
    state.model.update_running_stats(tape);
    adam_update(state, grads, config);
    sum += loss;
    ++count;
    if (batch_losses) batch_losses->push_back(loss);
  }
  if (count == 0) throw ConfigError("train_epoch received no batches");
  ++state.epoch;
  return sum / static_cast<double>(count);
}

namespace {

BatchSource span_source(std::span<const Batch> batches) {
  auto cursor = std::make_shared<std::size_t>(0);
  return [batches, cursor]() -> std::optional<Batch> {
    if (*cursor >= batches.size()) return std::nullopt;
    return batches[(*cursor)++];
  };
}

BatchSource stream_source(BatchStream& stream) {
  return [&stream]() { return stream.next(); };
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

double train_epoch(TrainState& state, std::span<const Batch> batches, const TrainConfig& config,
                   std::vector<double>* batch_losses) {
  return train_epoch(state, span_source(batches), config, batch_losses);
}

ValidationResult validate(const TrainState& state, const BatchSource& next, const TrainConfig& config) {
  std::map<std::string, ConfusionCounts> per_volume;
  double sum = 0.0;
  std::size_t count = 0;
  while (auto batch = next()) {
    const auto logits = state.model.forward(batch->images, Mode::eval);
    sum += static_cast<double>(combined_loss<float>(config.loss, logits.values(), batch->masks.values()));
    ++count;
    const auto pred = binarize(sigmoid(logits), config.threshold);
    const auto per_sample = static_cast<std::size_t>(pred.size() / batch->source.size());
    for (std::size_t b = 0; b < batch->source.size(); ++b) {
      std::vector<std::uint8_t> gt(per_sample);
      for (std::size_t i = 0; i < per_sample; ++i) gt[i] = batch->masks[b * per_sample + i] > 0.5f ? 1 : 0;
      per_volume[batch->source[b].volume_id] +=
          confusion_counts(std::span<const std::uint8_t>(pred.data() + b * per_sample, per_sample), gt);
    }
  }
  if (count == 0) throw ConfigError("validation set is empty");
  ValidationResult result;
  result.val_loss = sum / static_cast<double>(count);
  for (const auto& [_, c] : per_volume) {
    const auto s = metrics_from_counts(c);
    result.scores.dsc += s.dsc;
    result.scores.precision += s.precision;
    result.scores.recall += s.recall;
  }
  const auto n = static_cast<double>(per_volume.size());
  result.scores.dsc /= n;
  result.scores.precision /= n;
  result.scores.recall /= n;
  return result;
}

ValidationResult validate(const TrainState& state, std::span<const Batch> batches, const TrainConfig& config) {
  return validate(state, span_source(batches), config);
}

EarlyStopping::EarlyStopping(std::int64_t patience) : patience_(patience) {
  if (patience_ < 1) throw ConfigError("patience must be >= 1");
}

EarlyStopping::Decision EarlyStopping::update(double val_loss) {
  ++epoch_;
  Decision d;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_improve_ = 0;
    d.improved = true;
  } else {
    ++since_improve_;
  }
  d.stop = since_improve_ >= patience_;
  return d;
}

void save_history(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  json doc = json::array();
  for (const auto& r : history) doc.push_back(r);
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<EpochRecord> load_history(const std::filesystem::path& path) {
  return read_json_file(path).get<std::vector<EpochRecord>>();
}

namespace {

std::vector<Sample> select(std::span<const Sample> samples, const std::vector<std::string>& ids, const char* part) {
  std::vector<Sample> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.volume.id == id; });
    if (it == samples.end()) throw ConfigError(fmt::format("{} split names unknown volume '{}'", part, id));
    out.push_back(*it);
  }
  if (out.empty()) throw ConfigError(fmt::format("{} split is empty", part));
  return out;
}

}  // namespace

FitResult fit(std::span<const Sample> samples, const DatasetSplit& split, const TransformSpec& transform,
              const ModelConfig& model_config, const TrainConfig& train_config,
              const std::filesystem::path& out_dir, const FitOptions& options) {
  train_config.validate();
  model_config.validate();
  transform.validate();
  const auto train_set = select(samples, split.train_ids, "train");
  const auto val_set = select(samples, split.val_ids, "validation");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  auto params = options.initial_params ? *options.initial_params : init_model(model_config, train_config.seed);
  TrainState state(UNet<float>(model_config, std::move(params)));
  EarlyStopping stopper(train_config.patience);
  FitResult result;
  bool have_best = false;

  using Clock = std::chrono::steady_clock;
  for (std::int64_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    BatchStream train_stream(train_set, transform, train_config.batch_size, true,
                             mix_seed(train_config.seed, static_cast<std::uint64_t>(epoch)),
                             model_config.in_channels);
    const double train_loss = train_epoch(state, stream_source(train_stream), train_config);
    BatchStream val_stream(val_set, transform, train_config.batch_size, false, 0, model_config.in_channels);
    const auto val = validate(state, stream_source(val_stream), train_config);

    EpochRecord rec{epoch,          train_loss,           val.val_loss, val.scores.dsc, val.scores.precision,
                    val.scores.recall, std::chrono::duration<double>(Clock::now() - t0).count()};
    state.history.push_back(rec);
    const auto decision = stopper.update(val.val_loss);
    state.best_val_loss = stopper.best();
    state.epochs_since_improve = stopper.epochs_since_improve();
    if (decision.improved || !have_best) {
      // The first epoch always yields a checkpoint, even with a NaN loss.
      result.best = Checkpoint{model_config, transform, state.model.params(), epoch, val.val_loss,
                               train_config.loss.id, train_config.seed, kCheckpointFormatVersion};
      have_best = true;
      if (!out_dir.empty()) save_checkpoint(result.best, out_dir / "best.ckpt");
    }
    if (!out_dir.empty()) save_history(out_dir / "history.json", state.history);
    if (options.on_epoch) options.on_epoch(rec);
    if (decision.stop) break;
  }
  result.history = state.history;
  return result;
}

}  // namespace octseg
