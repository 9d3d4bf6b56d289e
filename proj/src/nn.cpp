#include "epsam/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace epsam::nn {

Conv::Conv(int in_channels, int out_channels, int kernel, int stride_, int pad_,
           bool reflect)
    : in_c(in_channels), out_c(out_channels), k(kernel), stride(stride_),
      pad(pad_), reflect_pad(reflect),
      w(static_cast<size_t>(out_channels) * in_channels * kernel * kernel, 0.0),
      b(out_channels, 0.0) {}

namespace {

// mirror without repeating the edge sample; valid while |overhang| < dim
inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

void Conv::init_he(Rng& rng) {
  double scale = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
  for (double& x : w) x = rng.normal() * scale;
  std::fill(b.begin(), b.end(), 0.0);
}

Tensor Conv::forward(const Tensor& x) const {
  if (x.c != in_c) throw ShapeError("Conv::forward: channel mismatch");
  const int oh = out_dim(x.h);
  const int ow = out_dim(x.w);
  Tensor out(out_c, oh, ow);
  for (int oc = 0; oc < out_c; ++oc) {
    const double* wc = w.data() + static_cast<size_t>(oc) * in_c * k * k;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b[oc];
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* wk = wc + static_cast<size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= x.h) {
              if (!reflect_pad) continue;
              iy = reflect_index(iy, x.h);
            }
            const double* row = &x.v[(static_cast<size_t>(ic) * x.h + iy) * x.w];
            for (int kx = 0; kx < k; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= x.w) {
                if (!reflect_pad) continue;
                ix = reflect_index(ix, x.w);
              }
              acc += wk[ky * k + kx] * row[ix];
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor Conv::backward(const Tensor& x, const Tensor& dout,
                      std::vector<double>& dw, std::vector<double>& db) const {
  Tensor dx(x.c, x.h, x.w);
  for (int oc = 0; oc < out_c; ++oc) {
    const double* wc = w.data() + static_cast<size_t>(oc) * in_c * k * k;
    double* dwc = dw.data() + static_cast<size_t>(oc) * in_c * k * k;
    for (int oy = 0; oy < dout.h; ++oy) {
      for (int ox = 0; ox < dout.w; ++ox) {
        const double g = dout.at(oc, oy, ox);
        if (g == 0.0) continue;
        db[oc] += g;
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* wk = wc + static_cast<size_t>(ic) * k * k;
          double* dwk = dwc + static_cast<size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= x.h) {
              if (!reflect_pad) continue;
              iy = reflect_index(iy, x.h);
            }
            const double* xrow = &x.v[(static_cast<size_t>(ic) * x.h + iy) * x.w];
            double* dxrow = &dx.v[(static_cast<size_t>(ic) * x.h + iy) * x.w];
            for (int kx = 0; kx < k; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= x.w) {
                if (!reflect_pad) continue;
                ix = reflect_index(ix, x.w);
              }
              dwk[ky * k + kx] += g * xrow[ix];
              dxrow[ix] += g * wk[ky * k + kx];
            }
          }
        }
      }
    }
  }
  return dx;
}

Linear::Linear(int in_dim, int out_dim)
    : in(in_dim), out(out_dim),
      w(static_cast<size_t>(in_dim) * out_dim, 0.0), b(out_dim, 0.0) {}

void Linear::init_he(Rng& rng) {
  double scale = std::sqrt(2.0 / static_cast<double>(in));
  for (double& x : w) x = rng.normal() * scale;
  std::fill(b.begin(), b.end(), 0.0);
}

std::vector<double> Linear::forward(const std::vector<double>& x) const {
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = w.data() + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> Linear::backward(const std::vector<double>& x,
                                     const std::vector<double>& dout,
                                     std::vector<double>& dw,
                                     std::vector<double>& db) const {
  std::vector<double> dx(in, 0.0);
  for (int o = 0; o < out; ++o) {
    const double g = dout[o];
    db[o] += g;
    const double* row = w.data() + static_cast<size_t>(o) * in;
    double* drow = dw.data() + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      drow[i] += g * x[i];
      dx[i] += g * row[i];
    }
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.v) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& dout) {
  Tensor dx = dout;
  for (size_t i = 0; i < dx.v.size(); ++i)
    if (out.v[i] <= 0.0) dx.v[i] = 0.0;
  return dx;
}

std::vector<double> global_avg_pool(const Tensor& x) {
  std::vector<double> pooled(x.c, 0.0);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int c = 0; c < x.c; ++c) {
    double acc = 0.0;
    const double* p = &x.v[static_cast<size_t>(c) * x.h * x.w];
    for (int i = 0; i < x.h * x.w; ++i) acc += p[i];
    pooled[c] = acc * inv;
  }
  return pooled;
}

Tensor global_avg_pool_backward(const std::vector<double>& dpooled, int c,
                                int h, int w) {
  Tensor dx(c, h, w);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    double g = dpooled[ci] * inv;
    double* p = &dx.v[static_cast<size_t>(ci) * h * w];
    for (int i = 0; i < h * w; ++i) p[i] = g;
  }
  return dx;
}

namespace {

struct Lerp {
  int i0, i1;
  double t;
};

std::vector<Lerp> up2_map(int in_dim) {
  std::vector<Lerp> m(2 * in_dim);
  for (int o = 0; o < 2 * in_dim; ++o) {
    double s = (o + 0.5) * 0.5 - 0.5;
    double f = std::floor(s);
    m[o].t = s - f;
    m[o].i0 = std::clamp(static_cast<int>(f), 0, in_dim - 1);
    m[o].i1 = std::clamp(static_cast<int>(f) + 1, 0, in_dim - 1);
  }
  return m;
}

}  // namespace

Tensor upsample2x(const Tensor& x) {
  auto my = up2_map(x.h);
  auto mx = up2_map(x.w);
  Tensor out(x.c, 2 * x.h, 2 * x.w);
  for (int c = 0; c < x.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) {
        const auto& ly = my[y];
        const auto& lx = mx[xx];
        double top = x.at(c, ly.i0, lx.i0) * (1.0 - lx.t) +
                     x.at(c, ly.i0, lx.i1) * lx.t;
        double bot = x.at(c, ly.i1, lx.i0) * (1.0 - lx.t) +
                     x.at(c, ly.i1, lx.i1) * lx.t;
        out.at(c, y, xx) = top * (1.0 - ly.t) + bot * ly.t;
      }
  return out;
}

Tensor upsample2x_backward(const Tensor& dout, int in_h, int in_w) {
  auto my = up2_map(in_h);
  auto mx = up2_map(in_w);
  Tensor dx(dout.c, in_h, in_w);
  for (int c = 0; c < dout.c; ++c)
    for (int y = 0; y < dout.h; ++y)
      for (int xx = 0; xx < dout.w; ++xx) {
        const auto& ly = my[y];
        const auto& lx = mx[xx];
        const double g = dout.at(c, y, xx);
        dx.at(c, ly.i0, lx.i0) += g * (1.0 - ly.t) * (1.0 - lx.t);
        dx.at(c, ly.i0, lx.i1) += g * (1.0 - ly.t) * lx.t;
        dx.at(c, ly.i1, lx.i0) += g * ly.t * (1.0 - lx.t);
        dx.at(c, ly.i1, lx.i1) += g * ly.t * lx.t;
      }
  return dx;
}

void AdamState::step(std::vector<double>& p, const std::vector<double>& g,
                     double lr, double wd, bool decoupled, double beta1,
                     double beta2, double eps) {
  if (m.size() != p.size()) init(p.size());
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (size_t i = 0; i < p.size(); ++i) {
    double grad = g[i];
    if (!decoupled && wd != 0.0) grad += wd * p[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    if (decoupled && wd != 0.0) p[i] -= lr * wd * p[i];
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace epsam::nn
