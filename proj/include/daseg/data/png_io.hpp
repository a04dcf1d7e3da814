#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace daseg::data {

/// Interleaved 8-bit image, row-major. channels is 1 (gray) or 3 (rgb).
struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * w + x) * channels + c]; }
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace daseg::data
