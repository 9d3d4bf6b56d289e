#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "epsam/image.hpp"

namespace epsam {

// 8-bit image buffer, grayscale (channels=1) or RGB (channels=3).
struct ImageU8 {
  int h = 0, w = 0, channels = 1;
  std::vector<uint8_t> data;  // row-major, interleaved

  ImageU8() = default;
  ImageU8(int height, int width, int ch)
      : h(height), w(width), channels(ch),
        data(static_cast<size_t>(height) * width * ch, 0) {}
  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * w + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * w + x) * channels + c];
  }
};

// 16-bit grayscale buffer (used for activation maps scaled by 65535).
struct ImageU16 {
  int h = 0, w = 0;
  std::vector<uint16_t> data;

  ImageU16() = default;
  ImageU16(int height, int width)
      : h(height), w(width), data(static_cast<size_t>(height) * width, 0) {}
  uint16_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  uint16_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

void write_png(const std::filesystem::path& path, const ImageU8& img);
void write_png(const std::filesystem::path& path, const ImageU16& img);
ImageU8 read_png_u8(const std::filesystem::path& path);
ImageU16 read_png_u16(const std::filesystem::path& path);

// Domain-level helpers (quantization conventions live here).
void save_patch_png(const std::filesystem::path& path, const Patch& patch);
std::vector<Image> load_patch_channels(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask load_mask_png(const std::filesystem::path& path);
void save_map_png16(const std::filesystem::path& path, const Image& map);
Image load_map_png16(const std::filesystem::path& path);

}  // namespace epsam
