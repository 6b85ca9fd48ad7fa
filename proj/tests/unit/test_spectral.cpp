// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>

#include "somnus/error.hpp"
#include "somnus/fft.hpp"
#include "somnus/rng.hpp"
#include "somnus/spectral.hpp"

using namespace somnus;
using std::numbers::pi;

namespace {

// Concentration matrix A[m][n] = sin(2 pi W (m-n)) / (pi (m-n)), A[m][m] = 2W.
// Its top eigenvectors are the Slepian sequences and its eigenvalues the
// concentration ratios; solved densely as an independent oracle.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> concentration_oracle(std::size_t n, double nw) {
  const double w = nw / static_cast<double>(n);
  Eigen::MatrixXd a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      a(i, j) = i == j ? 2.0 * w : std::sin(2.0 * pi * w * d) / (pi * d);
    }
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a);
}

std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < n; ++t) s += x[t] * std::polar(1.0, -2.0 * pi * static_cast<double>(k * t % n) / n);
    out[k] = s;
  }
  return out;
}

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  Rng rng(1);
  for (std::size_t n : {2u, 8u, 64u, 512u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    auto y = x;
    Fft(n).forward(y);
    const auto want = naive_dft(x);
    for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(y[k] - want[k]), 1e-9 * static_cast<double>(n)) << n << " " << k;
    Fft(n).inverse(y);
    for (std::size_t t = 0; t < n; ++t) EXPECT_LT(std::abs(y[t] - x[t]), 1e-12 * static_cast<double>(n));
  }
  EXPECT_THROW(Fft(12), ParameterError);
}

TEST(Dpss, GramMatrixIsIdentity) {
  const TaperBank& b = canonical_tapers();
  ASSERT_EQ(b.tapers.size(), 5u);
  double worst = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < 400; ++t) s += b.tapers[i][t] * b.tapers[j][t];
      worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Dpss, MatchesDenseEigensolverOracle) {
  const TaperBank& b = canonical_tapers();
  const auto es = concentration_oracle(400, 3.0);
  for (std::size_t k = 0; k < 5; ++k) {
    const Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(399 - k));
    double dot = 0;
    for (std::size_t t = 0; t < 400; ++t) dot += v(static_cast<Eigen::Index>(t)) * b.tapers[k][t];
    EXPECT_NEAR(std::fabs(dot), 1.0, 1e-8) << "taper " << k;
    EXPECT_NEAR(b.eigenvalues[k], es.eigenvalues()(static_cast<Eigen::Index>(399 - k)), 1e-8) << "taper " << k;
  }
}

TEST(Dpss, ConcentrationInvariant) {
  const TaperBank& b = canonical_tapers();
  for (std::size_t k = 0; k < 5; ++k) EXPECT_GT(b.eigenvalues[k], 0.9) << k;
  for (std::size_t k = 1; k < 5; ++k) EXPECT_LE(b.eigenvalues[k], b.eigenvalues[k - 1]);
}

TEST(Dpss, SignConventions) {
  const TaperBank& b = canonical_tapers();
  for (std::size_t k = 0; k < 5; k += 2) {
    double s = 0;
    for (double v : b.tapers[k]) s += v;
    EXPECT_GT(s, 0.0);
  }
  for (std::size_t k = 1; k < 5; k += 2) {
    const auto it = std::find_if(b.tapers[k].begin(), b.tapers[k].end(), [](double v) { return std::fabs(v) > 1e-14; });
    EXPECT_GT(*it, 0.0);
  }
}

TEST(Dpss, OtherSizesAgreeWithOracle) {
  const TaperBank b = dpss(64, 2.5, 4);
  const auto es = concentration_oracle(64, 2.5);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(b.eigenvalues[k], es.eigenvalues()(63 - static_cast<Eigen::Index>(k)), 1e-9);
}

TEST(Dpss, ParameterErrors) {
  EXPECT_THROW(dpss(400, 3.0, 0), ParameterError);
  EXPECT_THROW(dpss(400, 3.0, 6), ParameterError);
  EXPECT_THROW(dpss(4, 3.0, 5), ParameterError);
}

TEST(MtPsd, SinusoidPeakAtTenHz) {
  std::vector<double> x(400);
  for (std::size_t t = 0; t < 400; ++t) x[t] = std::sin(2 * pi * 10.0 * t / 200.0);
  const auto s = mt_psd(x, canonical_tapers());
  ASSERT_EQ(s.size(), 257u);
  const auto k = static_cast<long>(std::max_element(s.begin(), s.end()) - s.begin());
  const long ten = std::lround(10.0 / kBinHz);  // bin 26, 10.16 Hz
  EXPECT_LE(std::labs(k - ten), 1);
  // K = 5 tapers spread a tone over a +-NW/T = 1.5 Hz plateau; its centroid
  // sits on the tone.
  double num = 0, den = 0;
  for (std::size_t b = 0; b < s.size(); ++b) {
    if (bin_frequency(b) > 7.0 && bin_frequency(b) < 13.0) {
      num += s[b] * bin_frequency(b);
      den += s[b];
    }
  }
  EXPECT_NEAR(num / den, 10.0, 0.05);
}

TEST(MtPsd, WhiteNoiseIsFlat) {
  Rng rng(42);
  const MultitaperPsd psd(canonical_tapers());
  std::vector<double> acc(257, 0.0), x(400), out(257);
  for (int w = 0; w < 1000; ++w) {
    for (double& v : x) v = rng.normal();
    psd.estimate(x, out);
    for (std::size_t k = 0; k < 257; ++k) acc[k] += out[k] / 1000.0;
  }
  // Unit-variance white noise at 200 Hz: one-sided density 2 / fs.
  const double level = 2.0 / 200.0;
  for (std::size_t k = 5; k < 252; ++k) EXPECT_NEAR(acc[k] / level, 1.0, 0.10) << "bin " << k;
}

TEST(MtPsd, ScalesWithSquaredAmplitude) {
  Rng rng(3);
  std::vector<double> x(400);
  for (double& v : x) v = rng.normal();
  const auto s1 = mt_psd(x, canonical_tapers());
  const double a = 3.7;
  for (double& v : x) v *= a;
  const auto s2 = mt_psd(x, canonical_tapers());
  for (std::size_t k = 0; k < 257; ++k) {
    if (s1[k] == 0.0) continue;
    EXPECT_NEAR(s2[k] / (a * a * s1[k]), 1.0, 1e-12) << k;
  }
}

TEST(MtPsd, ShapeErrors) {
  const MultitaperPsd psd(canonical_tapers());
  std::vector<double> x(399), out(257);
  EXPECT_THROW(psd.estimate(x, out), ShapeError);
}

TEST(Spectrogram, Layout) {
  const auto off = subepoch_offsets();
  EXPECT_EQ(off.front(), 0u);
  EXPECT_EQ(off.back(), 5600u);
  EXPECT_EQ(off.back() + kWindowSamples, kEpochSamples);
  const auto f = frequency_axis();
  ASSERT_EQ(f.size(), 257u);
  EXPECT_DOUBLE_EQ(f[256], 100.0);
  EXPECT_DOUBLE_EQ(f[1], 0.390625);
}

TEST(Spectrogram, EpochGridsAreConsistent) {
  Rng rng(8);
  std::array<std::vector<float>, 6> ch;
  for (auto& c : ch) {
    c.resize(6000);
    for (auto& v : c) v = static_cast<float>(10.0 * rng.normal());
  }
  EpochChannels view;
  for (std::size_t i = 0; i < 6; ++i) view[i] = ch[i];
  const MultitaperPsd psd(canonical_tapers());
  const EpochSpectrogram s = spectrogram_epoch(view, psd);
  EXPECT_EQ(s.average.values.size(), 29u * 257u);
  for (std::size_t i = 0; i < s.average.values.size(); i += 113) {
    double mean = 0;
    for (const auto& g : s.channels) mean += g.values[i] / 6.0;
    EXPECT_NEAR(s.average.values[i], mean, 1e-12 * std::max(1.0, mean));
    const auto& m = Montage::standard();
    const double pair = 0.5 * (s.channels[m.pairs[0].left].values[i] + s.channels[m.pairs[0].right].values[i]);
    EXPECT_NEAR(s.pairs[0].values[i], pair, 1e-12 * std::max(1.0, pair));
  }
  std::array<std::vector<float>, 6> bad = ch;
  bad[2].resize(5999);
  view[2] = bad[2];
  EXPECT_THROW(spectrogram_epoch(view, psd), ShapeError);
}

TEST(Spectrogram, DbConversion) {
  EXPECT_DOUBLE_EQ(to_db(1.0), 10.0 * std::log10(1.0 + 1e-10));
  EXPECT_NEAR(to_db(0.0), -100.0, 1e-9);
}

TEST(Spectrogram, ExportRoundTrip) {
  SpectrogramTensor t;
  t.n_epochs = 2;
  t.view = "average";
  t.values.resize(2 * 29 * 257);
  for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<float>(i) * 0.25f;
  const auto b = write_spectrogram_file(t, canonical_tapers());
  const auto back = parse_spectrogram_file(b);
  EXPECT_EQ(back.n_epochs, 2u);
  EXPECT_EQ(back.view, "average");
  EXPECT_EQ(back.values, t.values);
  const std::string csv = spectrogram_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 29);
  auto bad = b;
  bad[0] = 'Q';
  EXPECT_THROW(parse_spectrogram_file(bad), ParseError);
}
