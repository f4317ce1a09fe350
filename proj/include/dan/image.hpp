#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dan {

// 8-bit RGB, row-major HWC.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    at(x, y, 0) = r;
    at(x, y, 1) = g;
    at(x, y, 2) = b;
  }
  bool operator==(const Image&) const = default;
};

// PNG (any bit depth/color type, converted to 8-bit RGB) or binary PPM/PGM.
// Grayscale inputs are expanded to RGB.
Image ReadImage(const std::string& path);

// Format chosen by extension: .png, or .ppm for anything else.
void WriteImage(const std::string& path, const Image& image);

// Single-channel output: .png as 8-bit gray, otherwise binary PGM.
void WriteGrayImage(const std::string& path, int width, int height, const std::vector<std::uint8_t>& values);

}  // namespace dan
