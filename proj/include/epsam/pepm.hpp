#pragma once

#include <vector>

#include "epsam/image.hpp"
#include "epsam/rng.hpp"

namespace epsam {

// Per-pixel activation share: each cell divided by the global sum. Sums to 1
// unless the source is all-zero, which is flagged degenerate.
struct EntropyMap {
  Image values;
  bool degenerate = false;
};

// All prompts carry foreground polarity.
struct PointPrompt {
  int row = 0;
  int col = 0;
};

struct PointPromptSet {
  std::vector<PointPrompt> points;
  int count() const { return static_cast<int>(points.size()); }
};

EntropyMap entropy_map(const Image& activation);

// Draws k distinct locations without replacement, probability proportional to
// the entropy values. If fewer than k cells have positive probability, all of
// them are returned. Deterministic given the rng seed.
PointPromptSet sample_points(const EntropyMap& entropy, int k, Rng& rng);

}  // namespace epsam
