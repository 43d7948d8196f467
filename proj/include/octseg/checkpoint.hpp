#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "octseg/model.hpp"
#include "octseg/preprocess.hpp"

namespace octseg {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "OCTSEG01";

/// Trained weights plus everything needed to reproduce predictions.
///
/// On disk: the 8 magic bytes, a little-endian u32 format version, a u64
/// length and that many bytes of JSON (model config, transform, training
/// metadata), then a u32 array count followed by each array as
/// {u32 name length, name, u8 trainable, u32 rank, u64 dims..., u64 count,
/// count little-endian float32 values}.
struct Checkpoint {
  ModelConfig config;
  TransformSpec transform;
  Parameters params;
  std::int64_t epoch = 0;
  double val_loss = 0.0;
  int loss_config_id = 4;
  std::uint64_t seed = 0;
  std::uint32_t format_version = kCheckpointFormatVersion;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

UNet<float> make_model(const Checkpoint& checkpoint);

}  // namespace octseg
