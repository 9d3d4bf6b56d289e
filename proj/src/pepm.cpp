#include "epsam/pepm.hpp"

#include <algorithm>

#include "epsam/errors.hpp"

namespace epsam {

EntropyMap entropy_map(const Image& activation) {
  double sum = 0.0;
  for (double v : activation.v) {
    if (v < 0.0) throw std::domain_error("entropy_map: negative activation");
    sum += v;
  }
  EntropyMap out;
  out.values = Image(activation.h, activation.w, 0.0);
  if (sum == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / sum;
  for (size_t i = 0; i < activation.v.size(); ++i)
    out.values.v[i] = activation.v[i] * inv;
  return out;
}

PointPromptSet sample_points(const EntropyMap& entropy, int k, Rng& rng) {
  if (k < 1) throw ConfigError("sample_points: k must be >= 1");
  if (entropy.degenerate)
    throw SamplingError("degenerate entropy map; skip this patch");

  const Image& p = entropy.values;
  std::vector<double> weights = p.v;
  int support = 0;
  double total = 0.0;
  for (double w : weights) {
    support += (w > 0.0);
    total += w;
  }
  if (support == 0)
    throw SamplingError("degenerate entropy map; skip this patch");

  const int draws = std::min(k, support);
  PointPromptSet out;
  out.points.reserve(draws);
  for (int d = 0; d < draws; ++d) {
    const double x = rng.uniform() * total;
    double cum = 0.0;
    int picked = -1;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      cum += weights[i];
      picked = static_cast<int>(i);
      if (x < cum) break;  // falls through to the last positive cell on fp slop
    }
    out.points.push_back({picked / p.w, picked % p.w});
    total -= weights[picked];
    weights[picked] = 0.0;
  }
  return out;
}

}  // namespace epsam
