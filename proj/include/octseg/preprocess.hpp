#pragma once

#include <cstdint>

#include "octseg/tensor.hpp"

namespace octseg {

enum class Normalize { unit_range, none };

/// Geometric and intensity recipe shared by images and masks. Defaults
/// widen 700-column B-scans to 704 and keep the top 352 rows.
struct TransformSpec {
  std::int64_t target_width = 704;
  std::int64_t crop_height = 352;
  std::int64_t crop_width = 704;
  std::int64_t crop_row_offset = 0;
  float pad_fill = 0.0f;
  Normalize normalize = Normalize::unit_range;

  /// Checks the input-independent invariants (crop divisible by 32, crop
  /// width within the padded width).
  void validate() const;
  /// Checks that an input of `height` x `width` can be transformed.
  void validate_for(std::int64_t height, std::int64_t width) const;

  bool operator==(const TransformSpec&) const = default;
};

/// Where the output window sits relative to the source image.
struct TransformGeometry {
  std::int64_t pad_left = 0;
  std::int64_t pad_right = 0;
  std::int64_t row_start = 0;  // source row of output row 0
  std::int64_t col_start = 0;  // padded-image column of output column 0
  std::int64_t out_height = 0;
  std::int64_t out_width = 0;
  std::int64_t source_width = 0;

  /// Source column for an output column; negative or >= source_width when
  /// the output column lies in padding.
  std::int64_t source_col(std::int64_t out_col) const { return out_col + col_start - pad_left; }
  bool is_padding(std::int64_t out_col) const {
    const auto c = source_col(out_col);
    return c < 0 || c >= source_width;
  }
};

TransformGeometry plan_transform(const TransformSpec& spec, std::int64_t height, std::int64_t width);

/// Centers the columns of an H x W image in an H x target_width canvas.
/// The extra columns are split floor/ceil between left and right.
template <typename T>
Tensor<T> pad_width(const Tensor<T>& image, std::int64_t target_width, T fill);

/// Keeps rows [crop_row_offset, crop_row_offset + crop_height) and the
/// horizontally centered crop_width columns.
template <typename T>
Tensor<T> crop(const Tensor<T>& image, const TransformSpec& spec);

struct TransformedPair {
  Tensor<float> image;
  Tensor<std::uint8_t> mask;
};

Tensor<float> transform_image(const Tensor<float>& image, const TransformSpec& spec);
/// Masks are always padded with 0.
Tensor<std::uint8_t> transform_mask(const Tensor<std::uint8_t>& mask, const TransformSpec& spec);
TransformedPair apply_transform(const Tensor<float>& image, const Tensor<std::uint8_t>& mask,
                                const TransformSpec& spec);

/// Places a transformed-space mask back onto the native H x W grid. Rows
/// outside the crop window and padded columns come back as 0.
Tensor<std::uint8_t> restore_mask(const Tensor<std::uint8_t>& transformed, const TransformSpec& spec,
                                  std::int64_t native_height, std::int64_t native_width);

}  // namespace octseg
