#pragma once

#include <cstdint>
#include <filesystem>

#include "octseg/tensor.hpp"

namespace octseg {

enum class BitDepth { k8 = 8, k16 = 16 };

/// Decodes a single-channel PNG to an H x W array scaled into [0, 1].
/// The file's sample depth must match `depth`.
Tensor<float> read_gray_png(const std::filesystem::path& path, BitDepth depth);
/// Decodes a 0/255 mask PNG; any value above half scale is a positive.
Tensor<std::uint8_t> read_mask_png(const std::filesystem::path& path);

void write_gray_png(const std::filesystem::path& path, const Tensor<float>& image, BitDepth depth);
/// Writes {0,1} labels as a 0/255 grayscale PNG.
void write_mask_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& labels);
/// `rgb` is H x W x 3 in R, G, B order.
void write_rgb_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& rgb);
/// Reads an 8-bit color PNG as H x W x 3 (R, G, B).
Tensor<std::uint8_t> read_rgb_png(const std::filesystem::path& path);

}  // namespace octseg
