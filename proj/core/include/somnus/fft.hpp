// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace somnus {

/// In-place iterative radix-2 FFT of a fixed power-of-two size. The plan is
/// immutable after construction and may be shared across threads.
class Fft {
 public:
  explicit Fft(std::size_t n);

  std::size_t size() const { return n_; }

  /// X[k] = sum_t x[t] exp(-2 pi i k t / n)
  void forward(std::span<std::complex<double>> data) const;
  /// x[t] = (1/n) sum_k X[k] exp(+2 pi i k t / n)
  void inverse(std::span<std::complex<double>> data) const;

 private:
  void transform(std::span<std::complex<double>> data, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;
};

}  // namespace somnus
