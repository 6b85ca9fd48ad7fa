// SPDX-License-Identifier: Apache-2.0
#include "somnus/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "array_file.hpp"
#include "somnus/error.hpp"
#include "somnus/parallel.hpp"

namespace somnus {

namespace {

template <typename T>
double line_length_impl(std::span<const T> x) {
  double s = 0.0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    s += std::fabs(static_cast<double>(x[t]) - static_cast<double>(x[t - 1]));
  }
  return s;
}

template <typename T>
double kurtosis_impl(std::span<const T> x) {
  if (x.size() < 4) {
    throw ParameterError("kurtosis needs at least 4 samples, got " + std::to_string(x.size()));
  }
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (T v : x) mean += static_cast<double>(v);
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (T v : x) {
    const double d = static_cast<double>(v) - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (std::sqrt(m2) < kDegenerateStd) return 0.0;
  return m4 / (m2 * m2);
}

struct RatioFamily {
  const char* name;
  const Band* num;
  const Band* den;
};

constexpr std::array<RatioFamily, 6> kRatioFamilies = {{
    {"delta_total", &kDelta, &kTotal},
    {"theta_total", &kTheta, &kTotal},
    {"alpha_total", &kAlpha, &kTotal},
    {"delta_theta", &kDelta, &kTheta},
    {"theta_alpha", &kTheta, &kAlpha},
    {"delta_alpha", &kDelta, &kAlpha},
}};
constexpr std::array<const Band*, 4> kKurtosisBands = {&kDelta, &kTheta, &kAlpha, &kSigma};
constexpr std::array<const char*, 4> kStatNames = {"p95", "min", "mean", "std"};

// Bin index range [first, last) for a band.
std::pair<std::size_t, std::size_t> band_bins(const Band& b) {
  std::size_t first = kFreqBins, last = 0;
  for (std::size_t k = 0; k < kFreqBins; ++k) {
    const double f = bin_frequency(k);
    if (b.lo_hz <= f && f < b.hi_hz) {
      first = std::min(first, k);
      last = k + 1;
    }
  }
  if (first >= last) return {0, 0};
  return {first, last};
}

}  // namespace

double line_length(std::span<const float> x) { return line_length_impl(x); }
double line_length(std::span<const double> x) { return line_length_impl(x); }
double kurtosis(std::span<const double> x) { return kurtosis_impl(x); }
double kurtosis(std::span<const float> x) { return kurtosis_impl(x); }

double percentile(std::span<const double> x, double q) {
  if (x.empty()) throw ParameterError("percentile of an empty series");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double rank = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

double band_power(const SpectrogramGrid& g, std::size_t s, const Band& band) {
  const auto [first, last] = band_bins(band);
  double p = 0.0;
  for (std::size_t k = first; k < last; ++k) p += g.at(s, k);
  return p;
}

const std::array<std::string, kNumExpertFeatures>& expert_feature_names() {
  static const auto names = [] {
    std::array<std::string, kNumExpertFeatures> n;
    const auto& m = Montage::standard();
    std::size_t i = 0;
    for (const auto& d : m.derivations) n[i++] = "linelen." + std::string(d.name);
    for (const auto& d : m.derivations) n[i++] = "kurt." + std::string(d.name);
    for (const auto& fam : kRatioFamilies) {
      for (const auto& p : m.pairs) {
        for (const char* st : kStatNames) {
          n[i++] = std::string("ratio.") + fam.name + "." + std::string(p.region) + "." + st;
        }
      }
    }
    for (const Band* b : kKurtosisBands) {
      for (const auto& p : m.pairs) n[i++] = std::string("kurt.band.") + b->name + "." + std::string(p.region);
    }
    if (i != kNumExpertFeatures) throw std::logic_error("expert feature table size mismatch");
    return n;
  }();
  return names;
}

std::vector<FeatureCategory> expert_feature_categories() {
  std::vector<FeatureCategory> cats = {{"line_length", kNumDerivedChannels},
                                       {"kurtosis", kNumDerivedChannels}};
  for (const auto& fam : kRatioFamilies) cats.push_back({std::string(fam.name) + "_ratio", 3 * kStatNames.size()});
  for (const Band* b : kKurtosisBands) cats.push_back({std::string("kurtosis_") + b->name + "_band", 3});
  return cats;
}

namespace {
constexpr std::size_t kCategoryTotal = 6 + 6 + 6 * 12 + 4 * 3;
static_assert(kCategoryTotal == kNumExpertFeatures);
}  // namespace

std::array<double, kNumExpertFeatures> expert_features(const EpochChannels& raw,
                                                       const std::array<SpectrogramGrid, 3>& pairs) {
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
    if (raw[c].size() != kEpochSamples) {
      throw ShapeError("expert_features: channel " + std::to_string(c) + " has " +
                       std::to_string(raw[c].size()) + " samples, expected 6000");
    }
  }
  for (const auto& g : pairs) {
    if (g.values.size() != kSubEpochs * kFreqBins) throw ShapeError("expert_features: grid must be 29 x 257");
    for (double v : g.values) {
      if (!std::isfinite(v)) throw DataError("expert_features: non-finite spectrogram value");
    }
  }

  std::array<double, kNumExpertFeatures> f{};
  std::size_t i = 0;
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) f[i++] = line_length(raw[c]);
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) f[i++] = kurtosis(raw[c]);

  // Band power series per pair: [pair][band][s]
  constexpr std::array<const Band*, 5> bands = {&kDelta, &kTheta, &kAlpha, &kSigma, &kTotal};
  std::array<std::array<std::array<double, kSubEpochs>, 5>, 3> power{};
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t b = 0; b < bands.size(); ++b) {
      for (std::size_t s = 0; s < kSubEpochs; ++s) power[p][b][s] = band_power(pairs[p], s, *bands[b]);
    }
  }
  auto band_slot = [&](const Band* b) {
    return static_cast<std::size_t>(std::find(bands.begin(), bands.end(), b) - bands.begin());
  };

  std::array<double, kSubEpochs> series{};
  for (const auto& fam : kRatioFamilies) {
    const std::size_t nb = band_slot(fam.num), db = band_slot(fam.den);
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t s = 0; s < kSubEpochs; ++s) {
        series[s] = power[p][nb][s] / (power[p][db][s] + kRatioEpsilon);
      }
      double mean = 0.0;
      for (double v : series) mean += v;
      mean /= static_cast<double>(kSubEpochs);
      double var = 0.0;
      for (double v : series) var += (v - mean) * (v - mean);
      var /= static_cast<double>(kSubEpochs);
      f[i++] = p95(series);
      f[i++] = *std::min_element(series.begin(), series.end());
      f[i++] = mean;
      f[i++] = std::sqrt(var);
    }
  }
  for (const Band* b : kKurtosisBands) {
    const std::size_t slot = band_slot(b);
    for (std::size_t p = 0; p < 3; ++p) f[i++] = kurtosis(std::span<const double>(power[p][slot]));
  }
  return f;
}

namespace {
template <typename T>
NormStats fit_impl(std::span<const T> rows, std::size_t dim) {
  if (dim == 0 || rows.size() % dim != 0) throw ShapeError("NormStats::fit: rows are not a whole number of width " + std::to_string(dim));
  const std::size_t n = rows.size() / dim;
  NormStats st;
  st.mean.assign(dim, 0.0);
  st.stdev.assign(dim, 0.0);
  if (n == 0) return st;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim; ++j) st.mean[j] += static_cast<double>(rows[r * dim + j]);
  }
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = static_cast<double>(rows[r * dim + j]) - st.mean[j];
      st.stdev[j] += d * d;
    }
  }
  for (double& s : st.stdev) s = std::sqrt(s / static_cast<double>(n));
  return st;
}

template <typename T>
void apply_norm_impl(std::span<T> rows, const NormStats& stats) {
  const std::size_t dim = stats.mean.size();
  if (dim == 0 || stats.stdev.size() != dim || rows.size() % dim != 0) {
    throw ShapeError("apply_norm: statistics width " + std::to_string(dim) + " does not fit the rows");
  }
  for (std::size_t r = 0; r < rows.size() / dim; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      double v = static_cast<double>(rows[r * dim + j]) - stats.mean[j];
      if (stats.stdev[j] >= kDegenerateStd) v /= stats.stdev[j];
      rows[r * dim + j] = static_cast<T>(v);
    }
  }
}
}  // namespace

NormStats NormStats::fit(std::span<const double> rows, std::size_t dim) { return fit_impl(rows, dim); }
NormStats NormStats::fit(std::span<const float> rows, std::size_t dim) { return fit_impl(rows, dim); }
void apply_norm(std::span<double> rows, const NormStats& stats) { apply_norm_impl(rows, stats); }
void apply_norm(std::span<float> rows, const NormStats& stats) { apply_norm_impl(rows, stats); }

FeatureMatrix normalize_features(const FeatureMatrix& fm, const NormStats& stats) {
  if (stats.mean.size() != kNumExpertFeatures || stats.stdev.size() != kNumExpertFeatures) {
    throw ShapeError("normalize_features: statistics have " + std::to_string(stats.mean.size()) +
                     " entries, expected 96");
  }
  FeatureMatrix out = fm;
  apply_norm(std::span<double>(out.values), stats);
  out.norm_stats = stats;
  return out;
}

FeatureMatrix denormalize_features(const FeatureMatrix& fm, const NormStats& stats) {
  if (stats.mean.size() != kNumExpertFeatures || stats.stdev.size() != kNumExpertFeatures) {
    throw ShapeError("denormalize_features: statistics must have 96 entries");
  }
  FeatureMatrix out = fm;
  for (std::size_t r = 0; r < out.n_epochs; ++r) {
    for (std::size_t j = 0; j < kNumExpertFeatures; ++j) {
      double& v = out.values[r * kNumExpertFeatures + j];
      if (stats.stdev[j] >= kDegenerateStd) v *= stats.stdev[j];
      v += stats.mean[j];
    }
  }
  out.norm_stats.reset();
  return out;
}

RawEpochTensor raw_tensor(const Recording& r) {
  RawEpochTensor t;
  t.n_epochs = epoch_count(r);
  t.values.resize(t.n_epochs * kEpochSamples * kNumDerivedChannels);
  for (std::size_t e = 0; e < t.n_epochs; ++e) {
    const auto ch = epoch_channels(r, e);
    for (std::size_t s = 0; s < kEpochSamples; ++s) {
      for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
        t.values[(e * kEpochSamples + s) * kNumDerivedChannels + c] = ch[c][s];
      }
    }
  }
  return t;
}

RecordingFeatures extract_features(const Recording& r, unsigned threads) {
  if (r.sample_rate_hz() != kCanonicalRateHz) {
    throw DataError("recording " + r.id + " must be at 200 Hz before feature extraction");
  }
  RecordingFeatures out;
  out.recording_id = r.id;
  const std::size_t n = epoch_count(r);
  out.expert.n_epochs = n;
  out.expert.values.resize(n * kNumExpertFeatures);
  out.average.n_epochs = n;
  out.average.view = "average";
  out.average.values.resize(n * kSubEpochs * kFreqBins);
  const MultitaperPsd psd(canonical_tapers());
  parallel_for(n, threads, [&](std::size_t e) {
    const auto ch = epoch_channels(r, e);
    const EpochSpectrogram spec = spectrogram_epoch(ch, psd);
    const auto f = expert_features(ch, spec.pairs);
    std::copy(f.begin(), f.end(), out.expert.values.begin() + static_cast<std::ptrdiff_t>(e * kNumExpertFeatures));
    std::transform(spec.average.values.begin(), spec.average.values.end(),
                   out.average.values.begin() + static_cast<std::ptrdiff_t>(e * kSubEpochs * kFreqBins),
                   [](double v) { return static_cast<float>(v); });
  });
  return out;
}

std::string features_csv(const FeatureMatrix& fm) {
  std::ostringstream os;
  os.precision(17);
  const auto& names = expert_feature_names();
  for (std::size_t j = 0; j < kNumExpertFeatures; ++j) os << (j ? "," : "") << names[j];
  os << '\n';
  for (std::size_t r = 0; r < fm.n_epochs; ++r) {
    for (std::size_t j = 0; j < kNumExpertFeatures; ++j) {
      os << (j ? "," : "") << fm.values[r * kNumExpertFeatures + j];
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::uint8_t> write_feature_file(const FeatureMatrix& fm) {
  nlohmann::json h;
  h["kind"] = "expert_features";
  h["shape"] = {fm.n_epochs, kNumExpertFeatures};
  h["names"] = expert_feature_names();
  h["conventions"] = {{"kurtosis", "pearson_population"},
                      {"percentile", "linear_between_order_statistics"},
                      {"ratio_epsilon", kRatioEpsilon}};
  std::vector<float> v(fm.values.begin(), fm.values.end());
  return detail::write_array_file("SOMF", h, v);
}

FeatureMatrix parse_feature_file(std::span<const std::uint8_t> bytes) {
  auto f = detail::parse_array_file("SOMF", bytes);
  FeatureMatrix fm;
  try {
    const auto shape = f.header.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[1] != kNumExpertFeatures) throw ShapeError("feature file must be n x 96");
    fm.n_epochs = shape[0];
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(12, std::string("feature header: ") + e.what());
  }
  if (f.values.size() != fm.n_epochs * kNumExpertFeatures) {
    throw ParseError(bytes.size(), "feature payload does not match its shape");
  }
  fm.values.assign(f.values.begin(), f.values.end());
  return fm;
}

}  // namespace somnus
