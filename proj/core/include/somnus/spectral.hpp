// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "somnus/fft.hpp"
#include "somnus/recording.hpp"

namespace somnus {

inline constexpr std::size_t kSubEpochs = 29;
inline constexpr std::size_t kFreqBins = 257;
inline constexpr std::size_t kWindowSamples = 400;
inline constexpr std::size_t kHopSamples = 200;
inline constexpr std::size_t kFftLength = 512;
inline constexpr double kCanonicalNw = 3.0;
inline constexpr std::size_t kCanonicalTapers = 5;
inline constexpr double kBinHz = kCanonicalRateHz / static_cast<double>(kFftLength);

/// Discrete prolate spheroidal (Slepian) sequences.
struct TaperBank {
  std::size_t n = 0;
  double nw = 0.0;
  std::size_t k = 0;
  std::vector<std::vector<double>> tapers;  // k orthonormal vectors of length n
  std::vector<double> eigenvalues;          // concentration in [-W, W], descending
};

/// First k Slepian sequences of length n with time-bandwidth product nw,
/// computed from the commuting tridiagonal matrix
///   diag_t = ((n-1-2t)/2)^2 cos(2 pi W),  off_t = t (n-t) / 2,  W = nw / n
/// by Sturm-sequence bisection and inverse iteration. Even-order tapers have a
/// positive sum, odd-order tapers a positive first nonzero sample. Reported
/// eigenvalues are the energy concentration of each taper in [-W, W].
///
/// Throws ParameterError unless 1 <= k <= 2 nw - 1 and n >= 2k.
TaperBank dpss(std::size_t n, double nw, std::size_t k);

/// The bank used for every spectrogram: n = 400, NW = 3, K = 5.
const TaperBank& canonical_tapers();

/// One-sided multitaper PSD of a single window:
///   S(f) = (1/K) sum_k |FFT_512(v_k * (x - mean x))|^2 / fs
/// with bins 1..255 doubled. Holds the FFT plan and a reference to the bank;
/// const member functions are safe to call concurrently.
class MultitaperPsd {
 public:
  explicit MultitaperPsd(const TaperBank& bank, double fs = kCanonicalRateHz,
                         std::size_t fft_length = kFftLength);

  std::size_t bins() const { return fft_.size() / 2 + 1; }
  const TaperBank& bank() const { return *bank_; }

  /// Throws ShapeError when x.size() != bank.n or out.size() != bins().
  void estimate(std::span<const double> x, std::span<double> out) const;
  std::vector<double> estimate(std::span<const double> x) const;

 private:
  const TaperBank* bank_;
  double fs_;
  Fft fft_;
};

std::vector<double> mt_psd(std::span<const double> x, const TaperBank& bank,
                           double fs = kCanonicalRateHz);

/// Frequency of bin k (Hz) for the canonical 512-point transform at 200 Hz.
inline double bin_frequency(std::size_t k) { return static_cast<double>(k) * kBinHz; }
std::vector<double> frequency_axis();
/// Start samples of the 29 two-second windows inside one epoch.
std::array<std::size_t, kSubEpochs> subepoch_offsets();

/// A 29 x 257 power grid, sub-epoch major.
struct SpectrogramGrid {
  std::vector<double> values = std::vector<double>(kSubEpochs * kFreqBins, 0.0);

  double& at(std::size_t s, std::size_t k) { return values[s * kFreqBins + k]; }
  double at(std::size_t s, std::size_t k) const { return values[s * kFreqBins + k]; }
  std::span<const double> row(std::size_t s) const {
    return std::span<const double>(values).subspan(s * kFreqBins, kFreqBins);
  }
};

/// Per-channel grids, one averaged grid per contralateral pair, and the
/// six-channel average shown by the viewer.
struct EpochSpectrogram {
  std::array<SpectrogramGrid, kNumDerivedChannels> channels;
  std::array<SpectrogramGrid, 3> pairs;
  SpectrogramGrid average;
};

using EpochChannels = std::array<std::span<const float>, kNumDerivedChannels>;

/// Views of the six derived channels of one epoch, in montage order.
EpochChannels epoch_channels(const Recording& r, std::size_t epoch);

/// Throws ShapeError if any channel does not hold exactly 6000 samples.
EpochSpectrogram spectrogram_epoch(const EpochChannels& epoch, const MultitaperPsd& psd,
                                   const Montage& m = Montage::standard());

/// 10 log10(S + 1e-10), used only at display and export boundaries.
double to_db(double power);
SpectrogramGrid to_db(const SpectrogramGrid& g);

/// n_epochs x 29 x 257 linear power for one view of a recording.
struct SpectrogramTensor {
  std::size_t n_epochs = 0;
  std::string view;            // "average", "frontal", channel label, ...
  std::vector<float> values;   // epoch-major, then sub-epoch, then bin
};

/// Versioned binary export: "SOMS" | u32 version | u32 header length |
/// JSON header (shape, view, axes, taper parameters) | f32 LE values.
std::vector<std::uint8_t> write_spectrogram_file(const SpectrogramTensor& t,
                                                 const TaperBank& bank);
SpectrogramTensor parse_spectrogram_file(std::span<const std::uint8_t> bytes);
/// CSV with columns epoch, subepoch_start_s, then one column per bin (Hz).
std::string spectrogram_csv(const SpectrogramTensor& t);

}  // namespace somnus
