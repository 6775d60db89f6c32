#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "impnet/image_io.hpp"
#include "impnet/ops.hpp"
#include "impnet/tensor.hpp"

namespace impnet {

class DataError : public std::runtime_error {
 public:
  enum class Kind { io, parse, label_range, empty_manifest, image };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct ManifestRecord {
  std::string image_path;
  int label = 0;
};

/// Reads "relative_path,label" lines (no header, LF or CRLF). Blank lines are skipped.
inline std::vector<ManifestRecord> load_manifest(const std::string& path, int num_classes) {
  std::ifstream f(path);
  if (!f) throw DataError(DataError::Kind::io, "cannot open manifest " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  for (int line_no = 1; std::getline(f, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(line_no);
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == line.size()) {
      throw DataError(DataError::Kind::parse, where + ": expected \"path,label\", got \"" + line + "\"");
    }
    int label = 0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, label);
    if (ec != std::errc() || ptr != last) {
      throw DataError(DataError::Kind::parse, where + ": label is not an integer in \"" + line + "\"");
    }
    if (label < 0 || label >= num_classes) {
      throw DataError(DataError::Kind::label_range, where + ": label " + std::to_string(label) + " outside [0, " +
                                                        std::to_string(num_classes) + ")");
    }
    records.push_back({line.substr(0, comma), label});
  }
  if (records.empty()) throw DataError(DataError::Kind::empty_manifest, "manifest " + path + " has no records");
  return records;
}

struct PreprocessSpec {
  int size = 128;
  float mean = 0.5f;
  float stddev = 0.5f;
};

/// ITU-R 601 luma, rounded to 8 bits.
inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image out{img.width, img.height, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(img.width) * img.height)};
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double y = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] + 0.114 * img.pixels[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
  }
  return out;
}

/// Bilinear resampling with half-pixel centers; identity when sizes match.
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int w, int h, int out_w, int out_h) {
  if (w == out_w && h == out_h) return src;
  std::vector<float> out(static_cast<std::size_t>(out_w) * out_h);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
      const double bot = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
      out[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

/// Grayscale -> resize -> [0, 1] -> (x - mean) / std. Output [1, size, size].
inline Tensor<float> preprocess(const Image& img, const PreprocessSpec& spec = {}) {
  const Image gray = to_grayscale(img);
  std::vector<float> px(gray.pixels.begin(), gray.pixels.end());
  auto resized = resize_bilinear(px, gray.width, gray.height, spec.size, spec.size);
  for (auto& v : resized) v = (v / 255.0f - spec.mean) / spec.stddev;
  return Tensor<float>({1, spec.size, spec.size}, std::move(resized));
}

inline Tensor<float> load_image(const std::string& path, const PreprocessSpec& spec = {}) {
  try {
    return preprocess(read_image(path), spec);
  } catch (const ImageError& e) {
    throw DataError(DataError::Kind::image, e.what());
  }
}

/// Horizontal flip of a [.., H, W] tensor.
inline Tensor<float> hflip(const Tensor<float>& x) {
  return ops::flip_last_axis(x);
}

/// One epoch of indices in which every represented class appears as often as
/// the majority class, then shuffled. Deterministic given the seed.
inline std::vector<std::size_t> oversample_indices(const std::vector<ManifestRecord>& records, std::uint64_t seed) {
  if (records.empty()) throw DataError(DataError::Kind::empty_manifest, "cannot oversample an empty manifest");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
  std::size_t target = 0;
  for (const auto& [_, idx] : by_class) target = std::max(target, idx.size());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> epoch;
  epoch.reserve(target * by_class.size());
  for (auto& [_, idx] : by_class) {
    const std::size_t reps = target / idx.size();
    for (std::size_t r = 0; r < reps; ++r) epoch.insert(epoch.end(), idx.begin(), idx.end());
    std::vector<std::size_t> extra = idx;
    std::shuffle(extra.begin(), extra.end(), rng);
    epoch.insert(epoch.end(), extra.begin(), extra.begin() + static_cast<std::ptrdiff_t>(target % idx.size()));
  }
  std::shuffle(epoch.begin(), epoch.end(), rng);
  return epoch;
}

/// Preprocessed images held in memory with their labels.
struct Dataset {
  std::vector<Tensor<float>> images;  // each [1, S, S]
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }

  std::vector<ManifestRecord> records() const {
    std::vector<ManifestRecord> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({std::to_string(i), labels[i]});
    return out;
  }
};

/// Loads every manifest record; relative paths resolve against `image_root`
/// (defaults to the manifest's directory).
inline Dataset load_dataset(const std::string& manifest_path, int num_classes, const PreprocessSpec& spec = {},
                            std::string image_root = "") {
  namespace fs = std::filesystem;
  if (image_root.empty()) image_root = fs::path(manifest_path).parent_path().string();
  Dataset ds;
  ds.num_classes = num_classes;
  for (const auto& rec : load_manifest(manifest_path, num_classes)) {
    fs::path p(rec.image_path);
    if (p.is_relative() && !image_root.empty()) p = fs::path(image_root) / p;
    ds.images.push_back(load_image(p.string(), spec));
    ds.labels.push_back(rec.label);
  }
  return ds;
}

namespace detail {

/// Horizontally mirror-invariant class prototypes in [0, 1].
inline double synthetic_pattern(int cls, double u, double v, double phase) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double cu = u - 0.5, cv = v - 0.5;
  const double r = std::sqrt(cu * cu + cv * cv);
  switch (cls % 8) {
    case 0: return 0.5 + 0.5 * std::sin(two_pi * 4 * v + phase);                 // horizontal stripes
    case 1: return 0.5 + 0.5 * std::cos(two_pi * 4 * cu);                       // vertical stripes
    case 2: return r < 0.25 + 0.03 * std::sin(phase) ? 0.9 : 0.15;               // disk
    case 3: return 0.5 + 0.5 * std::cos(two_pi * 4 * cu) * std::cos(two_pi * 4 * v + phase);  // checker
    case 4: return 0.5 + 0.5 * std::cos(two_pi * 6 * r + phase);                 // rings
    case 5: return v < 0.5 ? 0.85 : 0.15;                                        // bright top
    case 6: return 0.5 + 0.5 * std::cos(two_pi * 3 * (std::abs(cu) + v) + phase);  // chevrons
    default: return std::abs(cu) < 0.12 ? 0.9 : 0.2;                             // vertical bar
  }
}

}  // namespace detail

/// Toy expression-like set: per class a distinct mirror-symmetric pattern
/// with random phase and pixel noise. Returned as 8-bit grayscale images.
inline std::vector<std::pair<Image, int>> make_synthetic_images(int num_classes, int per_class, int size,
                                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.06);
  std::vector<std::pair<Image, int>> out;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c) {
      Image img{size, size, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size)};
      const double ph = phase(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double val = detail::synthetic_pattern(c, (x + 0.5) / size, (y + 0.5) / size, ph) + noise(rng);
          img.pixels[static_cast<std::size_t>(y) * size + x] =
              static_cast<std::uint8_t>(std::clamp(std::lround(val * 255.0), 0L, 255L));
        }
      }
      out.emplace_back(std::move(img), c);
    }
  }
  return out;
}

inline Dataset make_synthetic_dataset(int num_classes, int per_class, int size, std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = num_classes;
  for (auto& [img, label] : make_synthetic_images(num_classes, per_class, size, seed)) {
    ds.images.push_back(preprocess(img, {size}));
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace impnet
