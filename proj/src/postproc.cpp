#include "epsam/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "epsam/errors.hpp"

namespace epsam {

Mask quantile_threshold(const Image& cam, double q) {
  if (q < 0.0 || q >= 1.0) throw ConfigError("quantile q must lie in [0,1)");
  Mask out(cam.h, cam.w, 0);
  std::vector<double> positives;
  positives.reserve(cam.v.size());
  for (double v : cam.v)
    if (v > 0.0) positives.push_back(v);
  if (positives.empty()) return out;

  double threshold = 0.0;  // q = 0 keeps every positive pixel
  if (q > 0.0) {
    const size_t m = positives.size();
    const double pos = q * static_cast<double>(m - 1);
    const size_t lo = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(positives.begin(),
                     positives.begin() + static_cast<ptrdiff_t>(lo),
                     positives.end());
    const double vlo = positives[lo];
    double vhi = vlo;
    if (frac > 0.0 && lo + 1 < m)
      vhi = *std::min_element(positives.begin() + static_cast<ptrdiff_t>(lo) + 1,
                              positives.end());
    threshold = vlo + frac * (vhi - vlo);
  }
  for (size_t i = 0; i < cam.v.size(); ++i)
    out.v[i] = cam.v[i] > threshold ? 1 : 0;
  return out;
}

Image rotate_fuse(const CamProducer& producer, const Patch& patch) {
  const int s = patch.size();
  for (const auto& ch : patch.channels)
    if (ch.h != ch.w || ch.h != s)
      throw ShapeError("rotate_fuse: patch must be square");
  Image fused(s, s, 0.0);
  for (int k = 0; k < PostprocConfig::rotation_count; ++k) {
    Image cam = producer(rot90(patch, k));
    if (cam.h != s || cam.w != s)
      throw ShapeError("rotate_fuse: producer returned wrong shape");
    Image back = rot90(cam, (4 - k) % 4);
    for (size_t i = 0; i < fused.v.size(); ++i) fused.v[i] += back.v[i];
  }
  for (double& v : fused.v) v *= 1.0 / PostprocConfig::rotation_count;
  minmax_normalize(fused);
  return fused;
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offsets;
  const double r2 = (radius + 0.5) * (radius + 0.5);
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= r2) offsets.emplace_back(dy, dx);
  return offsets;
}

}  // namespace

Mask morph_open(const Mask& mask, int se_radius) {
  if (se_radius < 1) throw ConfigError("se_radius must be >= 1");
  const auto offsets = disk_offsets(se_radius);

  Mask eroded(mask.h, mask.w, 0);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      bool survives = true;
      for (const auto& [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w ||
            mask.at(ny, nx) == 0) {
          survives = false;
          break;
        }
      }
      eroded.at(y, x) = survives ? 1 : 0;
    }

  Mask dilated(mask.h, mask.w, 0);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (eroded.at(y, x) == 0) continue;
      for (const auto& [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < mask.h && nx >= 0 && nx < mask.w)
          dilated.at(ny, nx) = 1;
      }
    }
  return dilated;
}

Mask make_initial_mask(const CamProducer& producer, const Patch& patch,
                       const PostprocConfig& cfg) {
  Image fused = rotate_fuse(producer, patch);
  Mask thresholded = quantile_threshold(fused, cfg.quantile_q);
  return morph_open(thresholded, cfg.se_radius);
}

}  // namespace epsam
