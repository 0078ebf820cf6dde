#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace oed {

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0);

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel float raster; used for probability maps and masks.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  Raster() = default;
  Raster(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  bool empty() const noexcept { return width == 0 || height == 0; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

/// Lossless PNG encoding to / decoding from memory. Decoding throws IoError on
/// anything that is not a valid PNG.
std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_png_gray(const Raster& raster);
Image decode_png(std::span<const std::uint8_t> bytes);

bool looks_like_png(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace oed
