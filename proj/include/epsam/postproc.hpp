#pragma once

#include <functional>

#include "epsam/image.hpp"

namespace epsam {

struct PostprocConfig {
  double quantile_q = 0.3;  // fraction of positive activation dropped
  int se_radius = 2;        // disk structuring element radius
  static constexpr int rotation_count = 4;
};

using CamProducer = std::function<Image(const Patch&)>;

// Drops the bottom-q of strictly positive activation (linear-interpolation
// quantile, strict > at the boundary); zero pixels always stay 0; q = 0 keeps
// every positive pixel.
Mask quantile_threshold(const Image& cam, double q);

// Produces CAMs of the four quarter-turn rotations, inverse-rotates them,
// averages and re-normalizes.
Image rotate_fuse(const CamProducer& producer, const Patch& patch);

// Binary opening (erosion then dilation) with a disk structuring element;
// pixels outside the image count as background. The disk uses half-pixel
// inflation (dy^2+dx^2 <= (r+0.5)^2) so radius 1 covers the full 3x3
// neighbourhood.
Mask morph_open(const Mask& mask, int se_radius);

// rotate_fuse -> quantile_threshold -> morph_open, in that order.
Mask make_initial_mask(const CamProducer& producer, const Patch& patch,
                       const PostprocConfig& cfg);

}  // namespace epsam
