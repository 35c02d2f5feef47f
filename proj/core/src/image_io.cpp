#include "mail/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>

namespace mail {

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

std::optional<PixelBox> bounding_box(const BinaryMask& mask) {
  PixelBox box{mask.height, mask.width, -1, -1};
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        box.y0 = std::min(box.y0, y);
        box.x0 = std::min(box.x0, x);
        box.y1 = std::max(box.y1, y);
        box.x1 = std::max(box.x1, x);
      }
  if (box.y1 < 0) return std::nullopt;
  return box;
}

namespace {

void simple_write(const std::filesystem::path& path, png_uint_32 format, int height, int width,
                  const std::uint8_t* pixels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("png write failed for " + path.string() + ": " + msg);
  }
}

std::vector<std::uint8_t> simple_read(const std::filesystem::path& path, png_uint_32 format, int& height,
                                      int& width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("cannot read png " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode png " + path.string() + ": " + msg);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return pixels;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  simple_write(path, PNG_FORMAT_RGB, image.height, image.width, image.data.data());
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  simple_write(path, PNG_FORMAT_GRAY, image.height, image.width, image.data.data());
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");

  // Pack rows MSB first before entering the setjmp region.
  const std::size_t stride = (static_cast<std::size_t>(mask.width) + 7) / 8;
  std::vector<png_byte> packed(stride * static_cast<std::size_t>(mask.height), 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(mask.height));
  for (int y = 0; y < mask.height; ++y) {
    png_byte* row = packed.data() + stride * static_cast<std::size_t>(y);
    rows[y] = row;
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) row[x / 8] |= static_cast<png_byte>(0x80u >> (x % 8));
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width), static_cast<png_uint_32>(mask.height), 1,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage out;
  out.data = simple_read(path, PNG_FORMAT_RGB, out.height, out.width);
  return out;
}

BinaryMask read_png_mask(const std::filesystem::path& path) {
  BinaryMask out;
  auto gray = simple_read(path, PNG_FORMAT_GRAY, out.height, out.width);
  out.bits.resize(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) out.bits[i] = gray[i] ? 1 : 0;
  return out;
}

}  // namespace mail
