#pragma once

#include <cmath>
#include <vector>

#include "epsam/rng.hpp"
#include "epsam/tensor.hpp"

namespace epsam::nn {

// Layers keep parameters only; activations live in caller-owned traces so
// several samples can run forward/backward concurrently against const layers.

struct Conv {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  // zero padding by default; reflect (mirror without edge repeat) avoids the
  // border hot spots that zero padding puts into activation maps
  bool reflect_pad = false;

  std::vector<double> w;  // [out_c][in_c][k][k]
  std::vector<double> b;  // [out_c]

  Conv() = default;
  Conv(int in_channels, int out_channels, int kernel, int stride_, int pad_,
       bool reflect = false);

  void init_he(Rng& rng);
  int out_dim(int in_dim) const { return (in_dim - k + 2 * pad) / stride + 1; }

  Tensor forward(const Tensor& x) const;
  // Returns dx; accumulates parameter gradients into dw/db (pre-sized).
  Tensor backward(const Tensor& x, const Tensor& dout, std::vector<double>& dw,
                  std::vector<double>& db) const;
};

struct Linear {
  int in = 0, out = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> b;  // [out]

  Linear() = default;
  Linear(int in_dim, int out_dim);

  void init_he(Rng& rng);
  std::vector<double> forward(const std::vector<double>& x) const;
  std::vector<double> backward(const std::vector<double>& x,
                               const std::vector<double>& dout,
                               std::vector<double>& dw,
                               std::vector<double>& db) const;
};

Tensor relu(const Tensor& x);
// Uses the forward output to gate: dx = dout where out > 0.
Tensor relu_backward(const Tensor& out, const Tensor& dout);

std::vector<double> global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<double>& dpooled, int c,
                                int h, int w);

// Bilinear x2 upsampling with half-pixel centres.
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& dout, int in_h, int in_w);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable binary cross-entropy on a logit.
inline double bce_with_logits(double logit, double target) {
  return std::max(logit, 0.0) - logit * target +
         std::log1p(std::exp(-std::abs(logit)));
}
inline double bce_with_logits_grad(double logit, double target) {
  return sigmoid(logit) - target;
}

struct AdamState {
  std::vector<double> m, v;
  int t = 0;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
  // decoupled=false adds wd*p to the gradient (classic Adam + L2);
  // decoupled=true applies AdamW-style weight decay directly to p.
  void step(std::vector<double>& p, const std::vector<double>& g, double lr,
            double wd, bool decoupled, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);
};

}  // namespace epsam::nn
