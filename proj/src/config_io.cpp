#include "octseg/config_io.hpp"

#include <fstream>
#include <sstream>

namespace octseg {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

void to_json(json& j, const TransformSpec& s) {
  j = {{"target_width", s.target_width},
       {"crop_height", s.crop_height},
       {"crop_width", s.crop_width},
       {"crop_row_offset", s.crop_row_offset},
       {"pad_fill", s.pad_fill},
       {"normalize", s.normalize == Normalize::unit_range ? "unit_range" : "none"}};
}

void from_json(const json& j, TransformSpec& s) {
  read_opt(j, "target_width", s.target_width);
  read_opt(j, "crop_height", s.crop_height);
  read_opt(j, "crop_width", s.crop_width);
  read_opt(j, "crop_row_offset", s.crop_row_offset);
  read_opt(j, "pad_fill", s.pad_fill);
  if (j.contains("normalize")) {
    const auto n = j.at("normalize").get<std::string>();
    if (n == "unit_range") {
      s.normalize = Normalize::unit_range;
    } else if (n == "none") {
      s.normalize = Normalize::none;
    } else {
      throw ConfigError("transform.normalize must be unit_range or none, got " + n);
    }
  }
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"in_channels", c.in_channels},           {"encoder_depth", c.encoder_depth},
       {"encoder_channels", c.encoder_channels}, {"decoder_channels", c.decoder_channels},
       {"residual_blocks", c.residual_blocks},   {"out_channels", c.out_channels}};
}

void from_json(const json& j, ModelConfig& c) {
  read_opt(j, "in_channels", c.in_channels);
  read_opt(j, "encoder_depth", c.encoder_depth);
  read_opt(j, "encoder_channels", c.encoder_channels);
  read_opt(j, "decoder_channels", c.decoder_channels);
  read_opt(j, "residual_blocks", c.residual_blocks);
  read_opt(j, "out_channels", c.out_channels);
}

void to_json(json& j, const LossConfig& c) {
  j = {{"id", c.id}, {"w_bce", c.w_bce}, {"w_dice", c.w_dice}, {"dice_smooth", c.dice_smooth}};
}

void from_json(const json& j, LossConfig& c) {
  if (j.contains("id")) c = LossConfig::preset(j.at("id").get<int>());
  read_opt(j, "w_bce", c.w_bce);
  read_opt(j, "w_dice", c.w_dice);
  read_opt(j, "dice_smooth", c.dice_smooth);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
       {"beta2", c.beta2},           {"adam_eps", c.adam_eps},           {"patience", c.patience},
       {"max_epochs", c.max_epochs}, {"loss", c.loss},                   {"seed", c.seed},
       {"threshold", c.threshold}};
}

void from_json(const json& j, TrainConfig& c) {
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "patience", c.patience);
  read_opt(j, "max_epochs", c.max_epochs);
  read_opt(j, "loss", c.loss);
  read_opt(j, "seed", c.seed);
  read_opt(j, "threshold", c.threshold);
}

void to_json(json& j, const SyntheticSpec& s) {
  j = {{"n_volumes", s.n_volumes},
       {"slices_per_volume", s.slices_per_volume},
       {"height", s.height},
       {"width", s.width},
       {"inclusions_per_volume", {s.inclusions_per_volume.min, s.inclusions_per_volume.max}},
       {"inclusion_radius", {s.inclusion_radius.min, s.inclusion_radius.max}},
       {"inclusion_intensity", {s.inclusion_intensity.min, s.inclusion_intensity.max}},
       {"background_noise_std", s.background_noise_std},
       {"slab_level", s.slab_level},
       {"seed", s.seed}};
}

namespace {

template <typename T>
void read_range(const json& j, const char* key, Range<T>& r) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<T>>();
  if (v.size() != 2) throw ConfigError(std::string(key) + " must be [min, max]");
  r = {v[0], v[1]};
}

}  // namespace

void from_json(const json& j, SyntheticSpec& s) {
  read_opt(j, "n_volumes", s.n_volumes);
  read_opt(j, "slices_per_volume", s.slices_per_volume);
  read_opt(j, "height", s.height);
  read_opt(j, "width", s.width);
  read_range(j, "inclusions_per_volume", s.inclusions_per_volume);
  read_range(j, "inclusion_radius", s.inclusion_radius);
  read_range(j, "inclusion_intensity", s.inclusion_intensity);
  read_opt(j, "background_noise_std", s.background_noise_std);
  read_opt(j, "slab_level", s.slab_level);
  read_opt(j, "seed", s.seed);
}

void to_json(json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"dsc", r.dsc},
       {"precision", r.precision}, {"recall", r.recall}, {"seconds", r.seconds}};
}

void from_json(const json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<std::int64_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("val_loss").get<double>();
  r.dsc = j.at("dsc").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.seconds = j.value("seconds", 0.0);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace octseg
