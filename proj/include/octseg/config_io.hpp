#pragma once

// JSON mappings for the configuration types. Readers start from the
// type's defaults, so partial documents are accepted.

#include "json.hpp"
#include "octseg/data.hpp"
#include "octseg/loss.hpp"
#include "octseg/model.hpp"
#include "octseg/preprocess.hpp"
#include "octseg/train.hpp"

namespace octseg {

void to_json(nlohmann::json& j, const TransformSpec& spec);
void from_json(const nlohmann::json& j, TransformSpec& spec);
void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);
void to_json(nlohmann::json& j, const LossConfig& config);
void from_json(const nlohmann::json& j, LossConfig& config);
void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);
void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);
void to_json(nlohmann::json& j, const EpochRecord& record);
void from_json(const nlohmann::json& j, EpochRecord& record);

/// Writes `text` to a temporary sibling of `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace octseg
