#include "octseg/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "octseg/config_io.hpp"

namespace octseg {

using nlohmann::json;

namespace {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  json header = {{"model", c.config},
                 {"transform", c.transform},
                 {"epoch", c.epoch},
                 {"val_loss", c.val_loss},
                 {"loss_config_id", c.loss_config_id},
                 {"seed", c.seed}};
  const auto text = header.dump();

  std::string out(kCheckpointMagic);
  put_le<std::uint32_t>(out, c.format_version);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.size()));
  for (const auto& a : c.params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    out.push_back(a.trainable ? 1 : 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    put_le<std::uint64_t>(out, a.values.size());
    for (float v : a.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint: bad magic bytes");
  }
  Checkpoint c;
  c.format_version = r.get<std::uint32_t>("format_version");
  if (c.format_version != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported checkpoint format_version " + std::to_string(c.format_version) +
                          " (this build reads version " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  const auto header_text = r.take(static_cast<std::size_t>(header_len), "header");
  try {
    const auto header = json::parse(header_text);
    c.config = header.at("model").get<ModelConfig>();
    c.transform = header.at("transform").get<TransformSpec>();
    c.epoch = header.at("epoch").get<std::int64_t>();
    c.val_loss = header.at("val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                 : header.at("val_loss").get<double>();
    c.loss_config_id = header.at("loss_config_id").get<int>();
    c.seed = header.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("array name length");
    std::string name(r.take(name_len, "array name"));
    const bool trainable = r.get<std::uint8_t>("trainable flag") != 0;
    const auto rank = r.get<std::uint32_t>("array rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>("dim")));
    const auto n = r.get<std::uint64_t>("value count");
    if (static_cast<std::int64_t>(n) != shape_size(shape)) {
      throw CheckpointError("array '" + name + "' holds " + std::to_string(n) + " values for shape " +
                            shape_to_string(shape));
    }
    auto& arr = c.params.add(std::move(name), shape, trainable);
    for (auto& v : arr.values) v = std::bit_cast<float>(r.get<std::uint32_t>("array values"));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint arrays");

  try {
    c.config.validate();
    UNet<float> probe(c.config, c.params);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint parameters disagree with its config: ") + e.what());
  }
  for (const auto& a : c.params) {
    for (float v : a.values) {
      if (!std::isfinite(v)) throw CheckpointError("non-finite value in array '" + a.name + "'");
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

UNet<float> make_model(const Checkpoint& checkpoint) { return UNet<float>(checkpoint.config, checkpoint.params); }

}  // namespace octseg
