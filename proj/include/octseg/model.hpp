#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "octseg/tensor.hpp"

namespace octseg {

/// U-Net topology. Encoder stage i max-pools by 2 and applies two
/// conv-BN-ReLU blocks with encoder_channels[i] filters; decoder stage j
/// upsamples by 2, concatenates the encoder map of matching resolution (the
/// raw input for the last stage) and applies two conv-BN-ReLU blocks. A 1x1
/// convolution emits one logit channel.
struct ModelConfig {
  std::int64_t in_channels = 1;
  std::int64_t encoder_depth = 5;
  std::vector<std::int64_t> encoder_channels{32, 64, 128, 256, 512};
  std::vector<std::int64_t> decoder_channels{256, 128, 64, 32, 16};
  /// Adds a projection shortcut around each encoder stage.
  bool residual_blocks = false;
  std::int64_t out_channels = 1;

  void validate() const;
  /// Spatial divisor every input must respect, 2^encoder_depth.
  std::int64_t size_divisor() const { return std::int64_t{1} << encoder_depth; }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<T> values;
  bool trainable = true;  // false for normalization running statistics
};

/// Ordered collection of named arrays. Order is fixed by the layout of the
/// model, so two sets built from the same config align index by index.
template <typename T>
class ParameterSet {
 public:
  NamedArray<T>& add(std::string name, Shape shape, bool trainable, T fill = T{});

  std::size_t size() const { return arrays_.size(); }
  NamedArray<T>& operator[](std::size_t i) { return arrays_[i]; }
  const NamedArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
  const NamedArray<T>& at(const std::string& name) const;
  NamedArray<T>& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const;

  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  /// Number of trainable scalars.
  std::size_t trainable_count() const;
  /// Same layout with every value zero.
  ParameterSet zeros_like() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& a : arrays_) {
      auto& b = out.add(a.name, a.shape, a.trainable);
      b.values.assign(a.values.begin(), a.values.end());
    }
    return out;
  }

 private:
  std::vector<NamedArray<T>> arrays_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Parameters = ParameterSet<float>;

/// Zero-filled parameter set with the layout implied by `config`.
template <typename T>
ParameterSet<T> make_parameter_layout(const ModelConfig& config);

/// Seeded initialization: He-normal convolution weights, zero biases, unit
/// normalization scales.
Parameters init_model(const ModelConfig& config, std::uint64_t seed);

/// Total trainable scalars for `config`.
std::size_t count_parameters(const ModelConfig& config);
std::size_t conv_parameter_count(std::int64_t kernel, std::int64_t in_channels, std::int64_t out_channels,
                                 bool bias);

enum class Mode { train, eval };

/// Activations recorded by a forward pass for backpropagation.
template <typename T>
struct ForwardTape {
  ForwardTape();
  ~ForwardTape();
  ForwardTape(ForwardTape&&) noexcept;
  ForwardTape& operator=(ForwardTape&&) noexcept;

  Shape bottleneck_shape;
  Mode mode = Mode::eval;
  struct Data;
  std::unique_ptr<Data> data;
};

/// U-Net over NCHW tensors. Forward passes are const; running statistics are
/// only touched by update_running_stats().
template <typename T>
class UNet {
 public:
  UNet(ModelConfig config, ParameterSet<T> params);
  ~UNet();
  UNet(UNet&&) noexcept;
  UNet& operator=(UNet&&) noexcept;
  UNet(const UNet&);
  UNet& operator=(const UNet&);

  const ModelConfig& config() const { return config_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }

  /// Logits B x 1 x h x w. In train mode normalization uses batch statistics.
  /// When `tape` is given, everything backward() needs is recorded.
  Tensor<T> forward(const Tensor<T>& images, Mode mode = Mode::eval, ForwardTape<T>* tape = nullptr) const;
  /// Gradients of a scalar loss w.r.t. every trainable array, given dLoss/dlogits.
  /// Requires a train-mode tape. Non-trainable entries stay zero.
  ParameterSet<T> backward(const ForwardTape<T>& tape, const Tensor<T>& grad_logits) const;
  /// Folds the batch statistics of a train-mode tape into the running statistics.
  void update_running_stats(const ForwardTape<T>& tape);

  /// Throws ShapeError unless `shape` is B x in_channels x h x w with h, w
  /// divisible by 2^depth.
  void check_input(const Shape& shape) const;

  struct Layout;

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  std::unique_ptr<Layout> layout_;
};

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits);

/// Per-pixel probabilities in (0, 1), eval mode.
template <typename T>
Tensor<T> predict_proba(const UNet<T>& model, const Tensor<T>& images);

}  // namespace octseg
