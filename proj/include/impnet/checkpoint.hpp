#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "impnet/model.hpp"

namespace impnet {

// File layout, all integers little-endian:
//   "IMPN" | u32 version (1) | u32 entry count
//   per entry: u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims | float32 data

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, unknown_name, shape_mismatch, missing_name };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::array<char, 4> kCheckpointMagic{'I', 'M', 'P', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor<float>>;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "checkpoint " + path_ + " is truncated at byte " + std::to_string(pos_));
    }
  }

  const std::vector<char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const TensorMap& entries) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long: " + name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return w.data();
}

inline TensorMap decode_checkpoint(const std::vector<char>& buf, const std::string& path = "<memory>") {
  detail::ByteReader r(buf, path);
  std::array<char, 4> magic{};
  if (buf.size() < magic.size() || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), buf.begin())) {
    throw CheckpointError(CheckpointError::Kind::bad_magic, "checkpoint " + path + " has bad magic bytes");
  }
  r.bytes(magic.data(), magic.size());
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          "checkpoint " + path + " has unsupported version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>();
  TensorMap out;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name(r.le<std::uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    const int ndim = r.le<std::uint8_t>();
    Shape shape(static_cast<std::size_t>(ndim));
    for (auto& d : shape) {
      const auto v = r.le<std::uint32_t>();
      if (v == 0 || v > 0x7FFFFFFF) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              "checkpoint " + path + ": entry " + name + " has invalid dimension");
      }
      d = static_cast<int>(v);
    }
    const std::size_t limit = r.remaining() / sizeof(float);
    std::size_t n = 1;
    for (int d : shape) {
      const auto ud = static_cast<std::size_t>(d);
      n = n > limit / ud ? limit + 1 : n * ud;
    }
    if (n > limit) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "checkpoint " + path + ": data of entry " + name + " is truncated");
    }
    std::vector<float> data(n);
    for (auto& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>());
    out.insert_or_assign(name, Tensor<float>(shape, std::move(data)));
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint " + path + " has trailing bytes");
  }
  return out;
}

inline void write_checkpoint_file(const std::string& path, const TensorMap& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "failed writing " + path);
}

inline TensorMap read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

inline void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  TensorMap entries;
  for (const auto& [name, v] : params) entries.emplace(name, v.value());
  write_checkpoint_file(path, entries);
}

struct LoadOptions {
  /// Accept a subset of the config's names (e.g. a pretrained base); the rest
  /// keep their seeded initialization.
  bool allow_partial = false;
  std::uint64_t init_seed = 0;
};

/// Validates entries against the names and shapes the config implies.
inline ModelParams<float> params_from_entries(const TensorMap& entries, const ModelConfig& config,
                                              const LoadOptions& options = {}) {
  const auto expected = param_shapes(config);
  for (const auto& [name, t] : entries) {
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw CheckpointError(CheckpointError::Kind::unknown_name,
                            "checkpoint parameter " + name + " is not part of the configured model");
    }
    if (it->second != t.shape()) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "checkpoint parameter " + name + " has shape " + shape_str(t.shape()) +
                                " but the configured model expects " + shape_str(it->second));
    }
  }
  ModelParams<float> params;
  for (const auto& [name, shape] : expected) {
    auto it = entries.find(name);
    if (it != entries.end()) {
      params.insert(name, it->second);
    } else if (options.allow_partial) {
      params.insert(name, detail::init_param(name, shape, options.init_seed));
    } else {
      throw CheckpointError(CheckpointError::Kind::missing_name, "checkpoint is missing parameter " + name);
    }
  }
  return params;
}

inline ModelParams<float> load_checkpoint(const std::string& path, const ModelConfig& config,
                                          const LoadOptions& options = {}) {
  return params_from_entries(read_checkpoint_file(path), config, options);
}

}  // namespace impnet
