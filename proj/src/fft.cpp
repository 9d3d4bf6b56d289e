#include "epsam/fft.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace epsam {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = kTwoPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t j = 0; j < n; ++j) {
      double ang = sign * kTwoPi * static_cast<double>(k * j) / static_cast<double>(n);
      acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a.swap(out);
}

}  // namespace

void dft_1d(std::vector<std::complex<double>>& a, bool inverse) {
  if (a.empty()) return;
  if (is_pow2(a.size()))
    fft_radix2(a, inverse);
  else
    dft_direct(a, inverse);
  if (inverse) {
    double inv = 1.0 / static_cast<double>(a.size());
    for (auto& x : a) x *= inv;
  }
}

void fft_2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse) {
  if (static_cast<size_t>(h) * w != a.size())
    throw std::invalid_argument("fft_2d: shape mismatch");
  std::vector<std::complex<double>> line;
  line.reserve(std::max(h, w));
  for (int y = 0; y < h; ++y) {
    line.assign(a.begin() + static_cast<size_t>(y) * w,
                a.begin() + static_cast<size_t>(y + 1) * w);
    dft_1d(line, inverse);
    std::copy(line.begin(), line.end(), a.begin() + static_cast<size_t>(y) * w);
  }
  for (int x = 0; x < w; ++x) {
    line.resize(h);
    for (int y = 0; y < h; ++y) line[y] = a[static_cast<size_t>(y) * w + x];
    dft_1d(line, inverse);
    for (int y = 0; y < h; ++y) a[static_cast<size_t>(y) * w + x] = line[y];
  }
}

}  // namespace epsam
