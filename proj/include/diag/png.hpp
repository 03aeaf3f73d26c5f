#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace diag::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

GrayImage read_gray(const std::string& path);
void write_gray(const std::string& path, int width, int height, std::span<const std::uint8_t> pixels);
std::string encode_gray(int width, int height, std::span<const std::uint8_t> pixels);

/// Maps [0,1] values to 8-bit, rounding to nearest.
std::vector<std::uint8_t> quantize(std::span<const double> values);

}  // namespace diag::png
