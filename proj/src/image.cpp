#include "epsam/image.hpp"

#include <algorithm>
#include <cmath>

namespace epsam {

size_t Mask::foreground() const {
  size_t n = 0;
  for (uint8_t m : v) n += (m != 0);
  return n;
}

double Mask::foreground_fraction() const {
  if (v.empty()) return 0.0;
  return static_cast<double>(foreground()) / static_cast<double>(v.size());
}

const char* label_name(Label label) {
  return label == Label::positive ? "positive" : "negative";
}

Label label_from_name(const std::string& name) {
  if (name == "positive") return Label::positive;
  if (name == "negative") return Label::negative;
  throw ConfigError("unknown label '" + name + "'");
}

namespace {

// out(y, x) for one CCW quarter turn of an h x w input is in(x, w-1-y).
template <typename T>
T rot90_impl(const T& in, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return in;
  T out;
  if (k == 2) {
    out = T(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) out.at(y, x) = in.at(in.h - 1 - y, in.w - 1 - x);
    return out;
  }
  out = T(in.w, in.h);
  if (k == 1) {
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) out.at(y, x) = in.at(x, in.w - 1 - y);
  } else {  // k == 3
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) out.at(y, x) = in.at(in.h - 1 - x, y);
  }
  return out;
}

template <typename T>
T transpose_impl(const T& in) {
  T out(in.w, in.h);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = in.at(x, y);
  return out;
}

}  // namespace

Image rot90(const Image& in, int k) { return rot90_impl(in, k); }
Mask rot90(const Mask& in, int k) { return rot90_impl(in, k); }

Patch rot90(const Patch& in, int k) {
  Patch out = in;
  for (auto& ch : out.channels) ch = rot90(ch, k);
  return out;
}

Image transpose(const Image& in) { return transpose_impl(in); }
Mask transpose(const Mask& in) { return transpose_impl(in); }

Image resize_bilinear(const Image& in, int out_h, int out_w) {
  if (in.h <= 0 || in.w <= 0) throw ShapeError("resize_bilinear: empty input");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(in.h) / out_h;
  const double sx = static_cast<double>(in.w) / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> tx(out_w);
  for (int x = 0; x < out_w; ++x) {
    double s = (x + 0.5) * sx - 0.5;
    double f = std::floor(s);
    tx[x] = s - f;
    x0[x] = std::clamp(static_cast<int>(f), 0, in.w - 1);
    x1[x] = std::clamp(static_cast<int>(f) + 1, 0, in.w - 1);
  }
  for (int y = 0; y < out_h; ++y) {
    double s = (y + 0.5) * sy - 0.5;
    double f = std::floor(s);
    double ty = s - f;
    int y0 = std::clamp(static_cast<int>(f), 0, in.h - 1);
    int y1 = std::clamp(static_cast<int>(f) + 1, 0, in.h - 1);
    for (int x = 0; x < out_w; ++x) {
      double top = in.at(y0, x0[x]) * (1.0 - tx[x]) + in.at(y0, x1[x]) * tx[x];
      double bot = in.at(y1, x0[x]) * (1.0 - tx[x]) + in.at(y1, x1[x]) * tx[x];
      out.at(y, x) = top * (1.0 - ty) + bot * ty;
    }
  }
  return out;
}

double min_value(const Image& img) {
  return *std::min_element(img.v.begin(), img.v.end());
}

double max_value(const Image& img) {
  return *std::max_element(img.v.begin(), img.v.end());
}

void minmax_normalize(Image& img) {
  if (img.v.empty()) return;
  double lo = min_value(img);
  double hi = max_value(img);
  if (hi > lo) {
    double inv = 1.0 / (hi - lo);
    for (double& x : img.v) x = (x - lo) * inv;
  } else {
    std::fill(img.v.begin(), img.v.end(), 0.0);
  }
}

}  // namespace epsam
