#include "diag/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace diag::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warning_fn(png_structp, png_const_charp) {}

void write_to_string(png_structp png_ptr, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png_ptr));
  out->append(reinterpret_cast<const char*>(data), length);
}
void flush_noop(png_structp) {}

template <class SetupIo>
void encode(int width, int height, std::span<const std::uint8_t> pixels, SetupIo&& setup_io) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("png: pixel buffer does not match dimensions");
  }
  png_structp png_ptr =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png_ptr) throw std::runtime_error("png: cannot create write struct");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png_ptr, &info_ptr};
  if (!info_ptr) throw std::runtime_error("png: cannot create info struct");

  setup_io(png_ptr);
  png_set_IHDR(png_ptr, info_ptr, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info_ptr);
  for (int r = 0; r < height; ++r) {
    png_write_row(png_ptr, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width));
  }
  png_write_end(png_ptr, nullptr);
}

}  // namespace

GrayImage read_gray(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("png: cannot open " + path);

  png_structp png_ptr =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png_ptr) throw std::runtime_error("png: cannot create read struct");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png_ptr, &info_ptr};
  if (!info_ptr) throw std::runtime_error("png: cannot create info struct");

  png_init_io(png_ptr, file.get());
  png_read_info(png_ptr, info_ptr);

  const int color = png_get_color_type(png_ptr, info_ptr);
  const int depth = png_get_bit_depth(png_ptr, info_ptr);
  if (depth == 16) png_set_strip_16(png_ptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png_ptr, 1, -1, -1);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info_ptr);

  GrayImage img;
  img.width = static_cast<int>(png_get_image_width(png_ptr, info_ptr));
  img.height = static_cast<int>(png_get_image_height(png_ptr, info_ptr));
  const auto rowbytes = png_get_rowbytes(png_ptr, info_ptr);
  if (rowbytes != static_cast<png_size_t>(img.width)) {
    throw std::runtime_error("png: unsupported pixel layout in " + path);
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = img.pixels.data() + static_cast<std::size_t>(r) * img.width;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  return img;
}

void write_gray(const std::string& path, int width, int height, std::span<const std::uint8_t> pixels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("png: cannot write " + path);
  encode(width, height, pixels, [&](png_structp p) { png_init_io(p, file.get()); });
}

std::string encode_gray(int width, int height, std::span<const std::uint8_t> pixels) {
  std::string out;
  encode(width, height, pixels, [&](png_structp p) { png_set_write_fn(p, &out, write_to_string, flush_noop); });
  return out;
}

std::vector<std::uint8_t> quantize(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  return out;
}

}  // namespace diag::png
