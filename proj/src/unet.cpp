#include <cmath>
#include <optional>
#include <random>

#include "layers.hpp"
#include "octseg/error.hpp"
#include "octseg/model.hpp"

namespace octseg {

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (encoder_depth < 1 || encoder_depth > 8) throw ConfigError("encoder_depth must lie in [1, 8]");
  if (static_cast<std::int64_t>(encoder_channels.size()) != encoder_depth) {
    throw ConfigError("encoder_channels has " + std::to_string(encoder_channels.size()) +
                      " entries but encoder_depth is " + std::to_string(encoder_depth));
  }
  if (static_cast<std::int64_t>(decoder_channels.size()) != encoder_depth) {
    throw ConfigError("decoder_channels has " + std::to_string(decoder_channels.size()) +
                      " entries but encoder_depth is " + std::to_string(encoder_depth));
  }
  for (auto c : encoder_channels)
    if (c < 1) throw ConfigError("encoder channel counts must be positive");
  for (auto c : decoder_channels)
    if (c < 1) throw ConfigError("decoder channel counts must be positive");
  if (out_channels != 1) throw ConfigError("out_channels is fixed to 1 for binary segmentation");
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
NamedArray<T>& ParameterSet<T>::add(std::string name, Shape shape, bool trainable, T fill) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  index_.emplace(name, arrays_.size());
  const auto n = static_cast<std::size_t>(shape_size(shape));
  arrays_.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill), trainable});
  return arrays_.back();
}

template <typename T>
std::size_t ParameterSet<T>::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

template <typename T>
const NamedArray<T>& ParameterSet<T>::at(const std::string& name) const {
  return arrays_[index_of(name)];
}

template <typename T>
NamedArray<T>& ParameterSet<T>::at(const std::string& name) {
  return arrays_[index_of(name)];
}

template <typename T>
std::size_t ParameterSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_)
    if (a.trainable) n += a.values.size();
  return n;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  for (const auto& a : arrays_) out.add(a.name, a.shape, a.trainable);
  return out;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

// ---------------------------------------------------------------------------
// Layout

namespace detail {

struct ConvRef {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  std::int64_t cin = 0;
  std::int64_t cout = 0;
  int k = 3;
};

struct BnRef {
  std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
};

struct BlockRef {
  ConvRef conv1;
  BnRef bn1;
  ConvRef conv2;
  BnRef bn2;
  bool residual = false;
  bool has_proj = false;
  ConvRef proj;
  BnRef proj_bn;
};

template <typename T>
ConvRef add_conv(ParameterSet<T>& p, const std::string& name, std::int64_t cin, std::int64_t cout, int k,
                 bool bias) {
  ConvRef ref;
  ref.cin = cin;
  ref.cout = cout;
  ref.k = k;
  ref.weight = p.size();
  p.add(name + ".weight", {cout, cin, k, k}, true);
  if (bias) {
    ref.bias = p.size();
    p.add(name + ".bias", {cout}, true);
  }
  return ref;
}

template <typename T>
BnRef add_bn(ParameterSet<T>& p, const std::string& name, std::int64_t channels) {
  BnRef ref;
  ref.gamma = p.size();
  p.add(name + ".weight", {channels}, true, T{1});
  ref.beta = p.size();
  p.add(name + ".bias", {channels}, true);
  ref.mean = p.size();
  p.add(name + ".running_mean", {channels}, false);
  ref.var = p.size();
  p.add(name + ".running_var", {channels}, false, T{1});
  return ref;
}

template <typename T>
BlockRef add_block(ParameterSet<T>& p, const std::string& name, std::int64_t cin, std::int64_t cout,
                   bool residual) {
  BlockRef b;
  b.conv1 = add_conv(p, name + ".conv1", cin, cout, 3, false);
  b.bn1 = add_bn(p, name + ".bn1", cout);
  b.conv2 = add_conv(p, name + ".conv2", cout, cout, 3, false);
  b.bn2 = add_bn(p, name + ".bn2", cout);
  b.residual = residual;
  if (residual && cin != cout) {
    b.has_proj = true;
    b.proj = add_conv(p, name + ".proj", cin, cout, 1, false);
    b.proj_bn = add_bn(p, name + ".proj_bn", cout);
  }
  return b;
}

}  // namespace detail

using detail::BlockRef;
using detail::BnRef;
using detail::ConvRef;

template <typename T>
struct UNet<T>::Layout {
  std::vector<BlockRef> enc;
  std::vector<BlockRef> dec;
  ConvRef head;
};

namespace {

template <typename T>
typename UNet<T>::Layout build_layout(const ModelConfig& config, ParameterSet<T>& p) {
  config.validate();
  typename UNet<T>::Layout layout;
  const auto D = config.encoder_depth;
  std::int64_t cin = config.in_channels;
  for (std::int64_t i = 0; i < D; ++i) {
    const auto cout = config.encoder_channels[static_cast<std::size_t>(i)];
    layout.enc.push_back(detail::add_block(p, "enc" + std::to_string(i), cin, cout, config.residual_blocks));
    cin = cout;
  }
  for (std::int64_t j = 0; j < D; ++j) {
    const auto k = D - 1 - j;  // feature index of the skip
    const auto skip = k == 0 ? config.in_channels : config.encoder_channels[static_cast<std::size_t>(k - 1)];
    const auto cout = config.decoder_channels[static_cast<std::size_t>(j)];
    layout.dec.push_back(detail::add_block(p, "dec" + std::to_string(j), cin + skip, cout, false));
    cin = cout;
  }
  layout.head = detail::add_conv(p, "head", cin, config.out_channels, 1, true);
  return layout;
}

}  // namespace

template <typename T>
ParameterSet<T> make_parameter_layout(const ModelConfig& config) {
  ParameterSet<T> p;
  build_layout(config, p);
  return p;
}

template ParameterSet<float> make_parameter_layout(const ModelConfig&);
template ParameterSet<double> make_parameter_layout(const ModelConfig&);

std::size_t conv_parameter_count(std::int64_t kernel, std::int64_t in_channels, std::int64_t out_channels,
                                 bool bias) {
  return static_cast<std::size_t>(kernel * kernel * in_channels * out_channels + (bias ? out_channels : 0));
}

std::size_t count_parameters(const ModelConfig& config) {
  return make_parameter_layout<float>(config).trainable_count();
}

Parameters init_model(const ModelConfig& config, std::uint64_t seed) {
  auto params = make_parameter_layout<float>(config);
  std::mt19937_64 rng(seed);
  for (auto& a : params) {
    if (!a.trainable || a.shape.size() != 4) continue;
    const auto fan_in = static_cast<double>(a.shape[1] * a.shape[2] * a.shape[3]);
    // Rectified layers get the He gain; the logit head has no rectifier after it.
    const bool head = a.name.rfind("head.", 0) == 0;
    std::normal_distribution<double> dist(0.0, std::sqrt((head ? 1.0 : 2.0) / fan_in));
    for (auto& v : a.values) v = static_cast<float>(dist(rng));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Tape

namespace detail {

template <typename T>
struct BlockTape {
  Tensor<T> input;
  layers::BatchNormTape<T> bn1;
  Tensor<T> act1;
  layers::BatchNormTape<T> bn2;
  layers::BatchNormTape<T> proj_bn;
  Tensor<T> output;
};

}  // namespace detail

using detail::BlockTape;

template <typename T>
struct ForwardTape<T>::Data {
  std::vector<std::vector<std::uint8_t>> argmax;
  std::vector<BlockTape<T>> enc;
  std::vector<BlockTape<T>> dec;
};

template <typename T>
ForwardTape<T>::ForwardTape() = default;
template <typename T>
ForwardTape<T>::~ForwardTape() = default;
template <typename T>
ForwardTape<T>::ForwardTape(ForwardTape&&) noexcept = default;
template <typename T>
ForwardTape<T>& ForwardTape<T>::operator=(ForwardTape&&) noexcept = default;

template struct ForwardTape<float>;
template struct ForwardTape<double>;

// ---------------------------------------------------------------------------
// UNet

template <typename T>
UNet<T>::UNet(ModelConfig config, ParameterSet<T> params) : config_(std::move(config)) {
  ParameterSet<T> expected;
  layout_ = std::make_unique<Layout>(build_layout(config_, expected));
  if (params.size() != expected.size()) {
    throw ShapeError("parameter set has " + std::to_string(params.size()) + " arrays, config implies " +
                     std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].name != expected[i].name || params[i].shape != expected[i].shape ||
        params[i].values.size() != expected[i].values.size()) {
      throw ShapeError("parameter '" + params[i].name + "' " + shape_to_string(params[i].shape) +
                       " does not match config entry '" + expected[i].name + "' " +
                       shape_to_string(expected[i].shape));
    }
  }
  params_ = std::move(params);
}

template <typename T>
UNet<T>::~UNet() = default;
template <typename T>
UNet<T>::UNet(UNet&&) noexcept = default;
template <typename T>
UNet<T>& UNet<T>::operator=(UNet&&) noexcept = default;
template <typename T>
UNet<T>::UNet(const UNet& other)
    : config_(other.config_), params_(other.params_), layout_(std::make_unique<Layout>(*other.layout_)) {}
template <typename T>
UNet<T>& UNet<T>::operator=(const UNet& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    layout_ = std::make_unique<Layout>(*other.layout_);
  }
  return *this;
}

template <typename T>
void UNet<T>::check_input(const Shape& shape) const {
  if (shape.size() != 4) throw ShapeError("model input must be B x C x h x w, got " + shape_to_string(shape));
  if (shape[1] != config_.in_channels) {
    throw ShapeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(shape[1]));
  }
  const auto div = config_.size_divisor();
  if (shape[2] % div != 0 || shape[3] % div != 0 || shape[2] == 0 || shape[3] == 0) {
    throw ShapeError("input " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                     " is not divisible by " + std::to_string(div) +
                     " (U-Net inputs must be divisible by 2^depth, 32 for depth 5)");
  }
}

namespace {

template <typename T>
void block_forward(const BlockRef& b, const ParameterSet<T>& p, Tensor<T> x, bool training, bool record,
                   BlockTape<T>& tape) {
  using namespace layers;
  const auto z1 = conv2d_forward(x, p[b.conv1.weight].values.data(), static_cast<const T*>(nullptr),
                                 b.conv1.cout, b.conv1.k);
  auto a1 = batchnorm_forward(z1, p[b.bn1.gamma].values.data(), p[b.bn1.beta].values.data(),
                              p[b.bn1.mean].values.data(), p[b.bn1.var].values.data(), training,
                              record ? &tape.bn1 : nullptr);
  relu_inplace(a1);
  const auto z2 = conv2d_forward(a1, p[b.conv2.weight].values.data(), static_cast<const T*>(nullptr),
                                 b.conv2.cout, b.conv2.k);
  auto s = batchnorm_forward(z2, p[b.bn2.gamma].values.data(), p[b.bn2.beta].values.data(),
                             p[b.bn2.mean].values.data(), p[b.bn2.var].values.data(), training,
                             record ? &tape.bn2 : nullptr);
  if (b.residual) {
    if (b.has_proj) {
      const auto zp = conv2d_forward(x, p[b.proj.weight].values.data(), static_cast<const T*>(nullptr),
                                     b.proj.cout, b.proj.k);
      const auto sp = batchnorm_forward(zp, p[b.proj_bn.gamma].values.data(), p[b.proj_bn.beta].values.data(),
                                        p[b.proj_bn.mean].values.data(), p[b.proj_bn.var].values.data(),
                                        training, record ? &tape.proj_bn : nullptr);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += sp[i];
    } else {
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += x[i];
    }
  }
  relu_inplace(s);
  if (record) {
    tape.input = std::move(x);
    tape.act1 = std::move(a1);
  }
  tape.output = std::move(s);
}

template <typename T>
Tensor<T> block_backward(const BlockRef& b, const ParameterSet<T>& p, const BlockTape<T>& t, Tensor<T> dout,
                         ParameterSet<T>& g, bool want_dx) {
  using namespace layers;
  relu_backward_inplace(t.output, dout);
  Tensor<T> dx;
  if (b.residual && want_dx) {
    if (b.has_proj) {
      const auto dzp = batchnorm_backward(t.proj_bn, p[b.proj_bn.gamma].values.data(), dout,
                                          g[b.proj_bn.gamma].values.data(), g[b.proj_bn.beta].values.data());
      dx = conv2d_backward(t.input, p[b.proj.weight].values.data(), b.proj.cout, b.proj.k, dzp,
                           g[b.proj.weight].values.data(), static_cast<T*>(nullptr), true);
    } else {
      dx = dout;
    }
  } else if (b.residual && b.has_proj) {
    const auto dzp = batchnorm_backward(t.proj_bn, p[b.proj_bn.gamma].values.data(), dout,
                                        g[b.proj_bn.gamma].values.data(), g[b.proj_bn.beta].values.data());
    conv2d_backward(t.input, p[b.proj.weight].values.data(), b.proj.cout, b.proj.k, dzp,
                    g[b.proj.weight].values.data(), static_cast<T*>(nullptr), false);
  }
  const auto dz2 = batchnorm_backward(t.bn2, p[b.bn2.gamma].values.data(), dout, g[b.bn2.gamma].values.data(),
                                      g[b.bn2.beta].values.data());
  auto da1 = conv2d_backward(t.act1, p[b.conv2.weight].values.data(), b.conv2.cout, b.conv2.k, dz2,
                             g[b.conv2.weight].values.data(), static_cast<T*>(nullptr), true);
  relu_backward_inplace(t.act1, da1);
  const auto dz1 = batchnorm_backward(t.bn1, p[b.bn1.gamma].values.data(), da1, g[b.bn1.gamma].values.data(),
                                      g[b.bn1.beta].values.data());
  auto dx1 = conv2d_backward(t.input, p[b.conv1.weight].values.data(), b.conv1.cout, b.conv1.k, dz1,
                             g[b.conv1.weight].values.data(), static_cast<T*>(nullptr), want_dx);
  if (!want_dx) return {};
  if (dx.empty()) return dx1;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx1[i];
  return dx;
}

template <typename T>
void fold_running(const layers::BatchNormTape<T>& bn, const BnRef& ref, ParameterSet<T>& p) {
  if (bn.batch_mean.empty()) return;
  const double count = static_cast<double>(bn.xhat.size()) / static_cast<double>(bn.batch_mean.size());
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  auto& mean = p[ref.mean].values;
  auto& var = p[ref.var].values;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    mean[c] = static_cast<T>((1.0 - layers::kBnMomentum) * static_cast<double>(mean[c]) +
                             layers::kBnMomentum * bn.batch_mean[c]);
    var[c] = static_cast<T>((1.0 - layers::kBnMomentum) * static_cast<double>(var[c]) +
                            layers::kBnMomentum * bn.batch_var[c] * unbias);
  }
}

}  // namespace

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& images, Mode mode, ForwardTape<T>* tape) const {
  check_input(images.shape());
  const bool training = mode == Mode::train;
  const bool record = tape != nullptr;
  const auto D = static_cast<std::size_t>(config_.encoder_depth);
  const auto& p = params_;

  typename ForwardTape<T>::Data local;
  auto& d = record ? *(tape->data = std::make_unique<typename ForwardTape<T>::Data>()) : local;
  d.enc.resize(D);
  d.dec.resize(D);
  d.argmax.resize(D);

  const Tensor<T>* current = &images;
  for (std::size_t i = 0; i < D; ++i) {
    auto pooled = layers::maxpool2_forward(*current, record ? &d.argmax[i] : nullptr);
    block_forward(layout_->enc[i], p, std::move(pooled), training, record, d.enc[i]);
    current = &d.enc[i].output;
  }
  if (record) {
    tape->bottleneck_shape = current->shape();
    tape->mode = mode;
  }
  for (std::size_t j = 0; j < D; ++j) {
    const auto k = D - 1 - j;
    const Tensor<T>& skip = k == 0 ? images : d.enc[k - 1].output;
    auto cat = layers::concat_channels(layers::upsample2_forward(*current), skip);
    block_forward(layout_->dec[j], p, std::move(cat), training, record, d.dec[j]);
    current = &d.dec[j].output;
    // Without a tape, earlier decoder outputs are dead once consumed.
    if (!record && j > 0) d.dec[j - 1].output = Tensor<T>();
  }
  const auto& head = layout_->head;
  auto logits = layers::conv2d_forward(*current, p[head.weight].values.data(), p[*head.bias].values.data(),
                                       head.cout, head.k);
  return logits;
}

template <typename T>
ParameterSet<T> UNet<T>::backward(const ForwardTape<T>& tape, const Tensor<T>& grad_logits) const {
  if (!tape.data || tape.mode != Mode::train) {
    throw ConfigError("backward requires a tape recorded by a train-mode forward pass");
  }
  const auto& d = *tape.data;
  const auto D = static_cast<std::size_t>(config_.encoder_depth);
  const auto& p = params_;
  auto g = p.zeros_like();

  const auto& head = layout_->head;
  auto dcur = layers::conv2d_backward(d.dec[D - 1].output, p[head.weight].values.data(), head.cout, head.k,
                                      grad_logits, g[head.weight].values.data(), g[*head.bias].values.data(),
                                      true);
  // dfeat[k] accumulates the gradient of encoder output k-1 (k >= 1).
  std::vector<Tensor<T>> dfeat(D + 1);
  for (std::size_t j = D; j-- > 0;) {
    const auto dcat = block_backward(layout_->dec[j], p, d.dec[j], std::move(dcur), g, true);
    const auto up_channels = j == 0 ? d.enc[D - 1].output.dim(1) : d.dec[j - 1].output.dim(1);
    auto [dup, dskip] = layers::split_channels(dcat, up_channels);
    const auto k = D - 1 - j;
    if (k >= 1) dfeat[k] = std::move(dskip);
    auto dprev = layers::upsample2_backward(dup);
    if (j > 0) {
      dcur = std::move(dprev);
    } else {
      dfeat[D] = std::move(dprev);
    }
  }
  for (std::size_t i = D; i-- > 0;) {
    const bool want_dx = i > 0;
    const auto dpooled = block_backward(layout_->enc[i], p, d.enc[i], std::move(dfeat[i + 1]), g, want_dx);
    if (want_dx) {
      if (dfeat[i].empty()) dfeat[i] = Tensor<T>(d.enc[i - 1].output.shape(), T{0});
      layers::maxpool2_backward_add(dpooled, d.argmax[i], dfeat[i]);
    }
  }
  return g;
}

template <typename T>
void UNet<T>::update_running_stats(const ForwardTape<T>& tape) {
  if (!tape.data || tape.mode != Mode::train) return;
  const auto& d = *tape.data;
  const auto fold_block = [this](const BlockRef& b, const BlockTape<T>& t) {
    fold_running(t.bn1, b.bn1, params_);
    fold_running(t.bn2, b.bn2, params_);
    if (b.has_proj) fold_running(t.proj_bn, b.proj_bn, params_);
  };
  for (std::size_t i = 0; i < layout_->enc.size(); ++i) fold_block(layout_->enc[i], d.enc[i]);
  for (std::size_t j = 0; j < layout_->dec.size(); ++j) fold_block(layout_->dec[j], d.dec[j]);
}

template class UNet<float>;
template class UNet<double>;

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits[i];
    // Branch keeps exp() from overflowing for large |z|.
    out[i] = z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
  }
  return out;
}

template <typename T>
Tensor<T> predict_proba(const UNet<T>& model, const Tensor<T>& images) {
  return sigmoid(model.forward(images, Mode::eval));
}

template Tensor<float> sigmoid(const Tensor<float>&);
template Tensor<double> sigmoid(const Tensor<double>&);
template Tensor<float> predict_proba(const UNet<float>&, const Tensor<float>&);
template Tensor<double> predict_proba(const UNet<double>&, const Tensor<double>&);

}  // namespace octseg
