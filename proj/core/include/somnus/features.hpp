// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnus/recording.hpp"
#include "somnus/spectral.hpp"

namespace somnus {

inline constexpr std::size_t kNumExpertFeatures = 96;
inline constexpr double kRatioEpsilon = 1e-10;

/// Sum of absolute first differences.
double line_length(std::span<const float> x);
double line_length(std::span<const double> x);

/// Pearson (non-excess) kurtosis m4 / m2^2 with population moments. Returns 0
/// when the standard deviation is below 1e-12. Throws ParameterError for
/// fewer than four samples.
double kurtosis(std::span<const double> x);
double kurtosis(std::span<const float> x);

/// Linearly interpolated percentile at rank q (n-1) between order statistics.
double percentile(std::span<const double> x, double q);
inline double p95(std::span<const double> x) { return percentile(x, 0.95); }

/// Frequency band as a half-open interval [lo, hi) in Hz; bin k belongs to the
/// band iff lo <= k * 0.390625 < hi.
struct Band {
  const char* name;
  double lo_hz;
  double hi_hz;
};
inline constexpr Band kDelta{"delta", 0.5, 4.0};
inline constexpr Band kTheta{"theta", 4.0, 8.0};
inline constexpr Band kAlpha{"alpha", 8.0, 12.0};
inline constexpr Band kSigma{"sigma", 12.0, 20.0};
inline constexpr Band kTotal{"total", 0.0, 20.0};

/// Sum of grid row `s` over the bins of `band`.
double band_power(const SpectrogramGrid& g, std::size_t s, const Band& band);

/// The 96 stable column names in layout order:
///   [0..5]   linelen.<channel>
///   [6..11]  kurt.<channel>
///   [12..83] ratio.<family>.<pair>.<stat>; families delta_total, theta_total,
///            alpha_total, delta_theta, theta_alpha, delta_alpha; pairs
///            frontal, central, occipital; stats p95, min, mean, std
///   [84..95] kurt.band.<band>.<pair>; bands delta, theta, alpha, sigma
const std::array<std::string, kNumExpertFeatures>& expert_feature_names();

/// Feature counts by category, in layout order, for auditing the table.
struct FeatureCategory {
  std::string name;
  std::size_t count;
};
std::vector<FeatureCategory> expert_feature_categories();

/// One epoch's 96-vector from the raw six channels and the three
/// pair-averaged grids. Ratio statistics are taken over the 29-element
/// per-sub-epoch ratio series r(s) = P_num(s) / (P_den(s) + 1e-10); std is the
/// population standard deviation. Band kurtosis is the kurtosis of P_band(s)
/// over s. Throws DataError for a non-finite grid value.
std::array<double, kNumExpertFeatures> expert_features(const EpochChannels& raw,
                                                       const std::array<SpectrogramGrid, 3>& pairs);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;

  /// Column statistics over the rows of a row-major n x dim matrix.
  static NormStats fit(std::span<const double> rows, std::size_t dim);
  static NormStats fit(std::span<const float> rows, std::size_t dim);
};

inline constexpr double kDegenerateStd = 1e-12;

/// n_epochs x 96 expert features for one recording.
struct FeatureMatrix {
  std::size_t n_epochs = 0;
  std::vector<double> values;  // row-major
  std::optional<NormStats> norm_stats;

  std::span<const double> row(std::size_t e) const {
    return std::span<const double>(values).subspan(e * kNumExpertFeatures, kNumExpertFeatures);
  }
  static const std::array<std::string, kNumExpertFeatures>& names() { return expert_feature_names(); }
};

/// z-scores every column with the given statistics; columns whose std is
/// below 1e-12 are centred only. Throws ShapeError unless stats have 96
/// entries.
FeatureMatrix normalize_features(const FeatureMatrix& fm, const NormStats& stats);
/// Inverse of normalize_features.
FeatureMatrix denormalize_features(const FeatureMatrix& fm, const NormStats& stats);
/// In-place z-scoring of a row-major matrix of any width.
void apply_norm(std::span<double> rows, const NormStats& stats);
void apply_norm(std::span<float> rows, const NormStats& stats);

/// n_epochs x 6000 x 6 raw samples in montage channel order.
struct RawEpochTensor {
  std::size_t n_epochs = 0;
  std::vector<float> values;  // epoch-major, then sample, then channel
  float at(std::size_t e, std::size_t t, std::size_t c) const {
    return values[(e * kEpochSamples + t) * kNumDerivedChannels + c];
  }
};

RawEpochTensor raw_tensor(const Recording& r);

/// Everything the models can consume for one recording.
struct RecordingFeatures {
  std::string recording_id;
  FeatureMatrix expert;
  SpectrogramTensor average;  // six-channel average spectrogram
};

/// Extracts expert features and the average spectrogram of every whole epoch.
/// Epochs are partitioned across `threads` workers; the result does not
/// depend on the thread count.
RecordingFeatures extract_features(const Recording& r, unsigned threads = 1);

/// CSV with a header row of the 96 names.
std::string features_csv(const FeatureMatrix& fm);
/// "SOMF" binary, laid out like the spectrogram export.
std::vector<std::uint8_t> write_feature_file(const FeatureMatrix& fm);
FeatureMatrix parse_feature_file(std::span<const std::uint8_t> bytes);

}  // namespace somnus
