#pragma once

#include <vector>

#include "epsam/image.hpp"

namespace epsam {

// Dense C x H x W feature block.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        v(static_cast<size_t>(channels) * height * width, fill) {}

  double& at(int ci, int y, int x) {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  double at(int ci, int y, int x) const {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }

  Image plane(int ci) const {
    Image img(h, w);
    std::copy(v.begin() + static_cast<size_t>(ci) * h * w,
              v.begin() + static_cast<size_t>(ci + 1) * h * w, img.v.begin());
    return img;
  }
};

inline Tensor tensor_from_channels(const std::vector<Image>& channels) {
  Tensor t(static_cast<int>(channels.size()), channels[0].h, channels[0].w);
  for (size_t c = 0; c < channels.size(); ++c)
    std::copy(channels[c].v.begin(), channels[c].v.end(),
              t.v.begin() + c * channels[c].size());
  return t;
}

}  // namespace epsam
