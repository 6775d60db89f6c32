#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace impnet {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot read image " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ImageError("cannot decode PNG " + path + ": " + png.message);
  }
  Image img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.channels = color ? 3 : 1;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw ImageError("cannot decode PNG " + path + ": " + msg);
  }
  return img;
}

/// Binary (P5) or plain (P2) graymap with maxval <= 255.
inline Image decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ImageError("malformed PGM header in " + path);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  const bool binary = bytes[1] == '5';
  Image img;
  img.width = static_cast<int>(next_int());
  img.height = static_cast<int>(next_int());
  const long maxval = next_int();
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
    throw ImageError("unsupported PGM (only 8-bit) in " + path);
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(n);
  auto rescale = [maxval](long v) {
    return static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  };
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + n) throw ImageError("truncated PGM " + path);
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = rescale(bytes[pos + i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = rescale(std::min(next_int(), maxval));
  }
  return img;
}

}  // namespace detail

/// Decodes PNG or PGM, chosen by content signature.
inline Image read_image(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin())) return detail::decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) {
    return detail::decode_pgm(bytes, path);
  }
  throw ImageError("unsupported image format: " + path);
}

inline void write_png(const std::string& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw ImageError("cannot write PNG " + path + ": " + png.message);
  }
}

inline void write_pgm(const std::string& path, const Image& img) {
  if (img.channels != 1) throw ImageError("PGM output requires a grayscale image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot write " + path);
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace impnet
