// SPDX-License-Identifier: Apache-2.0
#include "somnus/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "somnus/error.hpp"

namespace somnus {

Fft::Fft(std::size_t n) : n_(n) {
  if (n < 2 || (n & (n - 1)) != 0) {
    throw ParameterError("FFT size must be a power of two >= 2, got " + std::to_string(n));
  }
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  bitrev_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
    bitrev_[i] = r;
  }
  twiddle_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle_[k] = {std::cos(a), std::sin(a)};
  }
}

void Fft::forward(std::span<std::complex<double>> data) const { transform(data, false); }

void Fft::inverse(std::span<std::complex<double>> data) const {
  transform(data, true);
  const double s = 1.0 / static_cast<double>(n_);
  for (auto& v : data) v *= s;
}

void Fft::transform(std::span<std::complex<double>> data, bool inverse) const {
  if (data.size() != n_) {
    throw ShapeError("FFT input has " + std::to_string(data.size()) + " points, plan is " +
                     std::to_string(n_));
  }
  for (std::size_t i = 0; i < n_; ++i) {
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  }
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const double wr = twiddle_[j * stride].real();
        const double wi = inverse ? -twiddle_[j * stride].imag() : twiddle_[j * stride].imag();
        const std::complex<double> u = data[start + j];
        const std::complex<double> x = data[start + j + half];
        // Explicit product; operator* on std::complex carries inf/nan
        // recovery that is not needed here.
        const std::complex<double> v{x.real() * wr - x.imag() * wi,
                                     x.real() * wi + x.imag() * wr};
        data[start + j] = u + v;
        data[start + j + half] = u - v;
      }
    }
  }
}

}  // namespace somnus
