#include "octseg/preprocess.hpp"

#include <algorithm>
#include <string>

namespace octseg {

namespace {

void require_rank2(const Shape& shape, const char* what) {
  if (shape.size() != 2) {
    throw ShapeError(std::string(what) + " expects an H x W image, got shape " + shape_to_string(shape));
  }
}

}  // namespace

void TransformSpec::validate() const {
  if (crop_height <= 0 || crop_width <= 0 || target_width <= 0) {
    throw ConfigError("transform dimensions must be positive");
  }
  if (crop_height % 32 != 0) {
    throw ConfigError("crop_height " + std::to_string(crop_height) +
                      " is not divisible by 32 (U-Net input rule)");
  }
  if (crop_width % 32 != 0) {
    throw ConfigError("crop_width " + std::to_string(crop_width) +
                      " is not divisible by 32 (U-Net input rule)");
  }
  if (crop_width > target_width) {
    throw ConfigError("crop_width " + std::to_string(crop_width) + " exceeds target_width " +
                      std::to_string(target_width));
  }
  if (crop_row_offset < 0) throw ConfigError("crop_row_offset must be >= 0");
}

void TransformSpec::validate_for(std::int64_t height, std::int64_t width) const {
  validate();
  if (width > target_width) {
    throw ShapeError("width " + std::to_string(width) + " exceeds target_width " +
                     std::to_string(target_width) + "; padding never truncates");
  }
  if (crop_row_offset + crop_height > height) {
    throw ShapeError("crop height: rows [" + std::to_string(crop_row_offset) + ", " +
                     std::to_string(crop_row_offset + crop_height) + ") exceed input height " +
                     std::to_string(height));
  }
}

TransformGeometry plan_transform(const TransformSpec& spec, std::int64_t height, std::int64_t width) {
  spec.validate_for(height, width);
  TransformGeometry g;
  g.pad_left = (spec.target_width - width) / 2;
  g.pad_right = spec.target_width - width - g.pad_left;
  g.row_start = spec.crop_row_offset;
  g.col_start = (spec.target_width - spec.crop_width) / 2;
  g.out_height = spec.crop_height;
  g.out_width = spec.crop_width;
  g.source_width = width;
  return g;
}

template <typename T>
Tensor<T> pad_width(const Tensor<T>& image, std::int64_t target_width, T fill) {
  require_rank2(image.shape(), "pad_width");
  const auto h = image.dim(0);
  const auto w = image.dim(1);
  if (w > target_width) {
    throw ShapeError("pad_width: width " + std::to_string(w) + " exceeds target " +
                     std::to_string(target_width) + "; padding never truncates");
  }
  const auto left = (target_width - w) / 2;
  Tensor<T> out({h, target_width}, fill);
  for (std::int64_t y = 0; y < h; ++y) {
    std::copy_n(image.data() + y * w, w, out.data() + y * target_width + left);
  }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, const TransformSpec& spec) {
  require_rank2(image.shape(), "crop");
  const auto h = image.dim(0);
  const auto w = image.dim(1);
  if (spec.crop_row_offset < 0 || spec.crop_row_offset + spec.crop_height > h) {
    throw ShapeError("crop height: rows [" + std::to_string(spec.crop_row_offset) + ", " +
                     std::to_string(spec.crop_row_offset + spec.crop_height) +
                     ") exceed input height " + std::to_string(h));
  }
  if (spec.crop_width > w) {
    throw ShapeError("crop width: " + std::to_string(spec.crop_width) + " exceeds input width " +
                     std::to_string(w));
  }
  const auto col_start = (w - spec.crop_width) / 2;
  Tensor<T> out({spec.crop_height, spec.crop_width});
  for (std::int64_t y = 0; y < spec.crop_height; ++y) {
    std::copy_n(image.data() + (y + spec.crop_row_offset) * w + col_start, spec.crop_width,
                out.data() + y * spec.crop_width);
  }
  return out;
}

template Tensor<float> pad_width(const Tensor<float>&, std::int64_t, float);
template Tensor<std::uint8_t> pad_width(const Tensor<std::uint8_t>&, std::int64_t, std::uint8_t);
template Tensor<float> crop(const Tensor<float>&, const TransformSpec&);
template Tensor<std::uint8_t> crop(const Tensor<std::uint8_t>&, const TransformSpec&);

Tensor<float> transform_image(const Tensor<float>& image, const TransformSpec& spec) {
  require_rank2(image.shape(), "transform_image");
  spec.validate_for(image.dim(0), image.dim(1));
  auto out = crop(pad_width(image, spec.target_width, spec.pad_fill), spec);
  if (spec.normalize == Normalize::unit_range) {
    for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

Tensor<std::uint8_t> transform_mask(const Tensor<std::uint8_t>& mask, const TransformSpec& spec) {
  require_rank2(mask.shape(), "transform_mask");
  spec.validate_for(mask.dim(0), mask.dim(1));
  return crop(pad_width(mask, spec.target_width, std::uint8_t{0}), spec);
}

TransformedPair apply_transform(const Tensor<float>& image, const Tensor<std::uint8_t>& mask,
                                const TransformSpec& spec) {
  if (image.shape() != mask.shape()) {
    throw ShapeError("image shape " + shape_to_string(image.shape()) + " differs from mask shape " +
                     shape_to_string(mask.shape()));
  }
  return {transform_image(image, spec), transform_mask(mask, spec)};
}

Tensor<std::uint8_t> restore_mask(const Tensor<std::uint8_t>& transformed, const TransformSpec& spec,
                                  std::int64_t native_height, std::int64_t native_width) {
  const auto g = plan_transform(spec, native_height, native_width);
  if (transformed.shape() != Shape{g.out_height, g.out_width}) {
    throw ShapeError("restore_mask: expected " + shape_to_string({g.out_height, g.out_width}) +
                     ", got " + shape_to_string(transformed.shape()));
  }
  Tensor<std::uint8_t> out({native_height, native_width}, 0);
  for (std::int64_t y = 0; y < g.out_height; ++y) {
    for (std::int64_t x = 0; x < g.out_width; ++x) {
      if (g.is_padding(x)) continue;
      out.at(y + g.row_start, g.source_col(x)) = transformed.at(y, x);
    }
  }
  return out;
}

}  // namespace octseg
