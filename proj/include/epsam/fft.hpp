#pragma once

#include <complex>
#include <vector>

namespace epsam {

// In-place 1-D DFT. Radix-2 Cooley-Tukey when the length is a power of two,
// direct O(n^2) evaluation otherwise (lengths here are small patch sides).
// The inverse applies the 1/n factor.
void dft_1d(std::vector<std::complex<double>>& a, bool inverse);

// Row-column 2-D transform over a row-major h x w buffer.
void fft_2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse);

}  // namespace epsam
