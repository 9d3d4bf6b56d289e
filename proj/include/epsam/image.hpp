#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epsam/errors.hpp"

namespace epsam {

// Dense 2-D float map (activation maps, CAMs, entropy maps, EVPs).
struct Image {
  int h = 0, w = 0;
  std::vector<double> v;

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w; }
  bool operator==(const Image& o) const = default;
};

// Dense 2-D {0,1} map.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int height, int width, uint8_t fill = 0)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Mask& o) const { return h == o.h && w == o.w; }
  size_t foreground() const;
  double foreground_fraction() const;
  bool operator==(const Mask& o) const = default;
};

enum class Label { negative, positive };

const char* label_name(Label label);
Label label_from_name(const std::string& name);

// A small multi-channel image with an image-level label. Channels hold values
// in [0,1]; patches are square with side a multiple of 4.
struct Patch {
  std::string id;
  std::string slide_id;
  Label label = Label::negative;
  std::vector<Image> channels;  // C = 3

  int size() const { return channels.empty() ? 0 : channels[0].h; }
};

// Exact quarter-turn rotation, k counter-clockwise 90-degree steps.
Image rot90(const Image& in, int k);
Mask rot90(const Mask& in, int k);
Patch rot90(const Patch& in, int k);

Image transpose(const Image& in);
Mask transpose(const Mask& in);

// Bilinear resize with half-pixel centre alignment.
Image resize_bilinear(const Image& in, int out_h, int out_w);

double min_value(const Image& img);
double max_value(const Image& img);

// Maps min -> 0 and max -> 1. Inputs without contrast (all values equal,
// including all-zero) map to the all-zero image.
void minmax_normalize(Image& img);

}  // namespace epsam
