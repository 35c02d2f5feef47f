#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace mail {

/// Binary H x W mask, one byte per pixel holding 0 or 1.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  void set(int y, int x, bool on) { bits[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0; }
  std::int64_t count() const;
  bool any() const { return count() > 0; }
  bool operator==(const BinaryMask&) const = default;
};

/// Inclusive pixel bounding box.
struct PixelBox {
  int y0, x0, y1, x1;
  bool operator==(const PixelBox&) const = default;
};

std::optional<PixelBox> bounding_box(const BinaryMask& mask);

/// 8-bit RGB image, interleaved row-major; channel values map to [0, 1] as v / 255.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float unit(int y, int x, int c) const { return static_cast<float>(at(y, x, c)) / 255.0f; }
  bool operator==(const RgbImage&) const = default;
};

/// 8-bit grayscale image.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;
  GrayImage() = default;
  GrayImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);
/// Writes a 1-bit grayscale PNG.
void write_png(const std::filesystem::path& path, const BinaryMask& mask);

RgbImage read_png_rgb(const std::filesystem::path& path);
/// Reads any grayscale PNG; nonzero pixels become 1.
BinaryMask read_png_mask(const std::filesystem::path& path);

}  // namespace mail
