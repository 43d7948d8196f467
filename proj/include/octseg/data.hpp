#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "octseg/image_io.hpp"
#include "octseg/preprocess.hpp"
#include "octseg/tensor.hpp"

namespace octseg {

/// Stack of grayscale B-scans, S x H x W, intensities in [0, 1].
struct Volume {
  std::string id;
  Tensor<float> slices;
  std::int64_t native_height = 0;
  std::int64_t native_width = 0;

  std::int64_t slice_count() const { return slices.empty() ? 0 : slices.dim(0); }
  std::int64_t height() const { return slices.dim(1); }
  std::int64_t width() const { return slices.dim(2); }
  Tensor<float> slice(std::int64_t s) const;
};

/// Binary inclusion labels aligned with a Volume (1 = inclusion).
struct MaskVolume {
  std::string volume_id;
  Tensor<std::uint8_t> labels;

  std::int64_t slice_count() const { return labels.empty() ? 0 : labels.dim(0); }
  Tensor<std::uint8_t> slice(std::int64_t s) const;
};

struct Sample {
  Volume volume;
  MaskVolume mask;
};

enum class DefectClass { inclusion };

/// Axis-aligned box over a slice range, [slice_start, slice_end).
struct BoxAnnotation {
  std::string volume_id;
  std::int64_t slice_start = 0;
  std::int64_t slice_end = 0;
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t w = 0;
  std::int64_t h = 0;
  DefectClass defect_class = DefectClass::inclusion;

  bool operator==(const BoxAnnotation&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;

  bool operator==(const DatasetSplit&) const = default;
};

struct SplitCounts {
  std::size_t train = 21;
  std::size_t val = 6;
  std::size_t test = 3;
};

template <typename T>
struct Range {
  T min{};
  T max{};
  bool operator==(const Range&) const = default;
};

/// Desk-scale stand-in for real scans: a dark layered slab with additive
/// speckle and bright ellipsoidal blobs.
struct SyntheticSpec {
  std::size_t n_volumes = 12;
  std::int64_t slices_per_volume = 16;
  std::int64_t height = 96;
  std::int64_t width = 192;
  Range<int> inclusions_per_volume{1, 3};
  Range<double> inclusion_radius{3.0, 7.0};
  Range<double> inclusion_intensity{0.45, 0.7};
  double background_noise_std = 0.04;
  double slab_level = 0.22;
  std::uint64_t seed = 1;

  void validate() const;
  /// Mean of the noiseless background over one slice.
  double mean_background() const;
  /// Noiseless background intensity at row `y` (the slab only varies with depth).
  double background_at_row(std::int64_t y) const;
  /// Rows whose background sits on the slab plateau, [first, last).
  std::pair<std::int64_t, std::int64_t> plateau_rows() const;
};

/// One mini-batch of transformed slices.
struct Batch {
  Tensor<float> images;  // B x C x h x w
  Tensor<float> masks;   // B x 1 x h x w, values in {0, 1}
  struct Source {
    std::string volume_id;
    std::int64_t slice_index = 0;
    bool operator==(const Source&) const = default;
  };
  std::vector<Source> source;

  std::int64_t size() const { return static_cast<std::int64_t>(source.size()); }
};

/// Loads every PNG in `dir` ordered by the numeric value of its stem.
/// The volume id is the directory name, or its parent's name when the
/// directory is called `slices`.
Volume load_volume(const std::filesystem::path& dir, BitDepth bit_depth = BitDepth::k8);
MaskVolume load_mask_volume(const std::filesystem::path& dir, const std::string& volume_id);

/// PNG files of a slice directory in numeric order.
std::vector<std::filesystem::path> list_slice_files(const std::filesystem::path& dir);

/// Parses the canonical annotation JSON. When `dims` has an entry for a
/// volume id (S, H, W), boxes of that volume are bounds-checked.
std::vector<BoxAnnotation> load_annotations(
    const std::filesystem::path& file, const std::map<std::string, Shape>& dims = {});
std::vector<BoxAnnotation> parse_annotations(const std::string& text,
                                             const std::map<std::string, Shape>& dims = {});
void save_annotations(const std::filesystem::path& file, std::span<const BoxAnnotation> annotations);
void validate_box(const BoxAnnotation& box, const Shape& shape);

/// Fills every box on its slice range. When `volume_id` is non-empty only
/// boxes of that volume are drawn.
MaskVolume rasterize_boxes(std::span<const BoxAnnotation> annotations, const Shape& shape,
                           const std::string& volume_id = {});
/// Tight 3-D bounding box of every 6-connected component of a mask.
std::vector<BoxAnnotation> extract_boxes(const MaskVolume& mask);

DatasetSplit split_dataset(std::span<const std::string> ids, SplitCounts counts, std::uint64_t seed);
DatasetSplit load_split(const std::filesystem::path& file);
void save_split(const std::filesystem::path& file, const DatasetSplit& split);

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);

/// Volume ids under a dataset root: subdirectories that hold `slices/`.
std::vector<std::string> list_volume_ids(const std::filesystem::path& root);
/// Loads a volume and its mask. Mask PNGs win over annotations; with
/// neither present a ValidationError names the volume.
Sample load_sample(const std::filesystem::path& root, const std::string& volume_id, BitDepth bit_depth,
                   std::span<const BoxAnnotation> annotations);
std::vector<Sample> load_samples(const std::filesystem::path& root, std::span<const std::string> ids,
                                 BitDepth bit_depth = BitDepth::k8);
/// Writes `<root>/<id>/slices/NNNN.png` and `<root>/<id>/masks/NNNN.png`.
void write_sample(const std::filesystem::path& root, const Sample& sample,
                  BitDepth bit_depth = BitDepth::k8);
std::string slice_filename(std::int64_t index);

/// Streams transformed, optionally shuffled mini-batches over every slice of
/// `samples`. The final batch may be partial.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> samples, TransformSpec transform, std::int64_t batch_size,
              bool shuffle, std::uint64_t seed, std::int64_t in_channels = 1);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  std::size_t slice_count() const { return order_.size(); }

 private:
  std::span<const Sample> samples_;
  TransformSpec transform_;
  std::int64_t batch_size_;
  std::int64_t in_channels_;
  std::vector<std::pair<std::size_t, std::int64_t>> order_;
  std::size_t cursor_ = 0;
};

std::vector<Batch> iterate_batches(std::span<const Sample> samples, const TransformSpec& transform,
                                   std::int64_t batch_size, bool shuffle, std::uint64_t seed,
                                   std::int64_t in_channels = 1);

}  // namespace octseg
