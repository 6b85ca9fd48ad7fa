// SPDX-License-Identifier: Apache-2.0
#include "somnus/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <sstream>

#include "array_file.hpp"
#include "somnus/error.hpp"

namespace somnus {

namespace {

using std::numbers::pi;

// Number of eigenvalues of the symmetric tridiagonal (diag, off) below x.
// off[i] couples rows i-1 and i; off[0] is unused.
std::size_t sturm_count(const std::vector<double>& diag, const std::vector<double>& off2,
                        double x) {
  std::size_t count = 0;
  double q = diag[0] - x;
  if (q < 0) ++count;
  for (std::size_t i = 1; i < diag.size(); ++i) {
    if (q == 0.0) q = 1e-300;
    q = diag[i] - x - off2[i] / q;
    if (q < 0) ++count;
  }
  return count;
}

// Solves (T - shift I) x = b in place with partial pivoting (the dgttrf /
// dgttrs scheme). A near-singular system is the point of inverse iteration,
// so a zero pivot is nudged rather than reported.
void solve_shifted(const std::vector<double>& diag, const std::vector<double>& off, double shift,
                   std::vector<double>& b) {
  const std::size_t n = diag.size();
  std::vector<double> dl(n, 0.0), d(n), du(n, 0.0), du2(n, 0.0);
  std::vector<bool> swapped(n, false);
  for (std::size_t i = 0; i < n; ++i) d[i] = diag[i] - shift;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    du[i] = off[i + 1];
    dl[i] = off[i + 1];
  }
  const double tiny = 1e-14 * (std::fabs(shift) + 1.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (std::fabs(d[i]) >= std::fabs(dl[i])) {
      if (d[i] == 0.0) d[i] = tiny;
      const double f = dl[i] / d[i];
      dl[i] = f;
      d[i + 1] -= f * du[i];
      du2[i] = 0.0;
    } else {
      const double f = d[i] / dl[i];
      d[i] = dl[i];
      dl[i] = f;
      const double t = du[i];
      du[i] = d[i + 1];
      d[i + 1] = t - f * d[i + 1];
      if (i + 2 < n) {
        du2[i] = du[i + 1];
        du[i + 1] = -f * du[i + 1];
      }
      swapped[i] = true;
    }
  }
  if (d[n - 1] == 0.0) d[n - 1] = tiny;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (swapped[i]) {
      std::swap(b[i], b[i + 1]);
      b[i + 1] -= dl[i] * b[i];
    } else {
      b[i + 1] -= dl[i] * b[i];
    }
  }
  b[n - 1] /= d[n - 1];
  if (n >= 2) b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
  for (std::size_t ii = n >= 2 ? n - 2 : 0; ii-- > 0;) {
    b[ii] = (b[ii] - du[ii] * b[ii + 1] - du2[ii] * b[ii + 2]) / d[ii];
  }
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
}

// Energy of v inside [-W, W]: v' A v with A[i][j] = sin(2 pi W (i-j)) / (pi (i-j)),
// evaluated through the autocorrelation of v.
double concentration(const std::vector<double>& v, double w) {
  const std::size_t n = v.size();
  double lam = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    double r = 0.0;
    for (std::size_t t = 0; t + m < n; ++t) r += v[t] * v[t + m];
    if (m == 0) {
      lam += 2.0 * w * r;
    } else {
      lam += 2.0 * r * std::sin(2.0 * pi * w * static_cast<double>(m)) /
             (pi * static_cast<double>(m));
    }
  }
  return lam;
}

}  // namespace

TaperBank dpss(std::size_t n, double nw, std::size_t k) {
  if (!(nw > 0.0)) throw ParameterError("dpss: time-bandwidth product must be positive");
  if (k < 1 || static_cast<double>(k) > 2.0 * nw - 1.0) {
    throw ParameterError("dpss: taper count " + std::to_string(k) +
                         " outside [1, 2*NW-1] for NW=" + std::to_string(nw));
  }
  if (n < 2 * k) throw ParameterError("dpss: window length must be at least 2k");

  const double w = nw / static_cast<double>(n);
  const double cw = std::cos(2.0 * pi * w);
  std::vector<double> diag(n), off(n, 0.0), off2(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double c = (static_cast<double>(n) - 1.0 - 2.0 * static_cast<double>(t)) / 2.0;
    diag[t] = c * c * cw;
    if (t > 0) {
      off[t] = static_cast<double>(t) * static_cast<double>(n - t) / 2.0;
      off2[t] = off[t] * off[t];
    }
  }

  // Gershgorin interval.
  double lo = diag[0], hi = diag[0];
  for (std::size_t t = 0; t < n; ++t) {
    const double r = std::fabs(off[t]) + (t + 1 < n ? std::fabs(off[t + 1]) : 0.0);
    lo = std::min(lo, diag[t] - r);
    hi = std::max(hi, diag[t] + r);
  }
  const double scale = std::max(std::fabs(lo), std::fabs(hi));

  TaperBank bank;
  bank.n = n;
  bank.nw = nw;
  bank.k = k;
  for (std::size_t j = 0; j < k; ++j) {
    // The j-th largest eigenvalue is the one whose index (ascending) is n-1-j.
    const std::size_t target = n - 1 - j;
    double a = lo, b = hi;
    for (int it = 0; it < 200 && (b - a) > 4.0 * std::numeric_limits<double>::epsilon() * scale;
         ++it) {
      const double mid = 0.5 * (a + b);
      if (sturm_count(diag, off2, mid) <= target) {
        a = mid;
      } else {
        b = mid;
      }
    }
    const double lambda = 0.5 * (a + b);

    std::vector<double> v(n);
    for (std::size_t t = 0; t < n; ++t) {
      v[t] = 1.0 + 0.1 * std::sin(static_cast<double>(t * (j + 3)));
    }
    for (int it = 0; it < 4; ++it) {
      solve_shifted(diag, off, lambda, v);
      for (const auto& u : bank.tapers) {
        const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (std::size_t t = 0; t < n; ++t) v[t] -= dot * u[t];
      }
      normalize(v);
    }

    double sign_ref = 0.0;
    if (j % 2 == 0) {
      sign_ref = std::accumulate(v.begin(), v.end(), 0.0);
    } else {
      const double vmax = std::fabs(*std::max_element(
          v.begin(), v.end(), [](double x, double y) { return std::fabs(x) < std::fabs(y); }));
      for (double x : v) {
        if (std::fabs(x) > 1e-12 * vmax) {
          sign_ref = x;
          break;
        }
      }
    }
    if (sign_ref < 0.0) {
      for (double& x : v) x = -x;
    }
    bank.eigenvalues.push_back(concentration(v, w));
    bank.tapers.push_back(std::move(v));
  }
  return bank;
}

const TaperBank& canonical_tapers() {
  static const TaperBank bank = dpss(kWindowSamples, kCanonicalNw, kCanonicalTapers);
  return bank;
}

MultitaperPsd::MultitaperPsd(const TaperBank& bank, double fs, std::size_t fft_length)
    : bank_(&bank), fs_(fs), fft_(fft_length) {
  if (fft_length < bank.n) throw ParameterError("FFT length shorter than the taper length");
}

void MultitaperPsd::estimate(std::span<const double> x, std::span<double> out) const {
  const std::size_t n = bank_->n;
  const std::size_t nfft = fft_.size();
  const std::size_t nbins = bins();
  if (x.size() != n) {
    throw ShapeError("mt_psd: window has " + std::to_string(x.size()) + " samples, taper bank expects " +
                     std::to_string(n));
  }
  if (out.size() != nbins) throw ShapeError("mt_psd: output must hold " + std::to_string(nbins) + " bins");

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);

  std::fill(out.begin(), out.end(), 0.0);
  std::vector<std::complex<double>> buf(nfft);
  // Two real tapered windows share one complex transform.
  for (std::size_t k = 0; k < bank_->k; k += 2) {
    const bool pair = k + 1 < bank_->k;
    const auto& va = bank_->tapers[k];
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t t = 0; t < n; ++t) {
      const double c = x[t] - mean;
      buf[t] = {va[t] * c, pair ? bank_->tapers[k + 1][t] * c : 0.0};
    }
    fft_.forward(buf);
    for (std::size_t f = 0; f < nbins; ++f) {
      const std::complex<double> z = buf[f];
      const std::complex<double> zc = std::conj(buf[(nfft - f) % nfft]);
      const std::complex<double> a = 0.5 * (z + zc);
      out[f] += std::norm(a);
      if (pair) {
        const std::complex<double> d = z - zc;
        // (z - conj(z[-f])) / 2i
        const std::complex<double> b{0.5 * d.imag(), -0.5 * d.real()};
        out[f] += std::norm(b);
      }
    }
  }
  const double norm = 1.0 / (static_cast<double>(bank_->k) * fs_);
  for (std::size_t f = 0; f < nbins; ++f) {
    const bool edge = f == 0 || f == nbins - 1;
    out[f] *= norm * (edge ? 1.0 : 2.0);
  }
}

std::vector<double> MultitaperPsd::estimate(std::span<const double> x) const {
  std::vector<double> out(bins());
  estimate(x, out);
  return out;
}

std::vector<double> mt_psd(std::span<const double> x, const TaperBank& bank, double fs) {
  return MultitaperPsd(bank, fs).estimate(x);
}

std::vector<double> frequency_axis() {
  std::vector<double> f(kFreqBins);
  for (std::size_t k = 0; k < kFreqBins; ++k) f[k] = bin_frequency(k);
  return f;
}

std::array<std::size_t, kSubEpochs> subepoch_offsets() {
  std::array<std::size_t, kSubEpochs> o{};
  for (std::size_t s = 0; s < kSubEpochs; ++s) o[s] = s * kHopSamples;
  return o;
}

EpochChannels epoch_channels(const Recording& r, std::size_t epoch) {
  const auto& m = Montage::standard();
  EpochChannels e{};
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
    e[c] = epoch_view(r.channel(m.derivations[c].name), epoch);
  }
  return e;
}

EpochSpectrogram spectrogram_epoch(const EpochChannels& epoch, const MultitaperPsd& psd,
                                   const Montage& m) {
  if (psd.bank().n != kWindowSamples || psd.bins() != kFreqBins) {
    throw ShapeError("spectrogram_epoch needs a 400-sample bank and 257 bins");
  }
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
    if (epoch[c].size() != kEpochSamples) {
      throw ShapeError("spectrogram_epoch: channel " + std::to_string(c) + " has " +
                       std::to_string(epoch[c].size()) + " samples, expected 6000");
    }
  }
  EpochSpectrogram out;
  std::vector<double> window(kWindowSamples);
  const auto offsets = subepoch_offsets();
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
    for (std::size_t s = 0; s < kSubEpochs; ++s) {
      for (std::size_t t = 0; t < kWindowSamples; ++t) window[t] = epoch[c][offsets[s] + t];
      psd.estimate(window, std::span<double>(out.channels[c].values).subspan(s * kFreqBins, kFreqBins));
    }
  }
  for (std::size_t p = 0; p < 3; ++p) {
    const auto& a = out.channels[m.pairs[p].left].values;
    const auto& b = out.channels[m.pairs[p].right].values;
    auto& dst = out.pairs[p].values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5 * (a[i] + b[i]);
  }
  auto& avg = out.average.values;
  for (std::size_t i = 0; i < avg.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < kNumDerivedChannels; ++c) s += out.channels[c].values[i];
    avg[i] = s / static_cast<double>(kNumDerivedChannels);
  }
  return out;
}

double to_db(double power) { return 10.0 * std::log10(power + 1e-10); }

SpectrogramGrid to_db(const SpectrogramGrid& g) {
  SpectrogramGrid out;
  for (std::size_t i = 0; i < g.values.size(); ++i) out.values[i] = to_db(g.values[i]);
  return out;
}

std::vector<std::uint8_t> write_spectrogram_file(const SpectrogramTensor& t, const TaperBank& bank) {
  if (t.values.size() != t.n_epochs * kSubEpochs * kFreqBins) {
    throw ShapeError("spectrogram tensor size does not match n_epochs x 29 x 257");
  }
  nlohmann::json h;
  h["kind"] = "spectrogram";
  h["shape"] = {t.n_epochs, kSubEpochs, kFreqBins};
  h["view"] = t.view;
  h["units"] = "uV^2/Hz";
  h["bin_hz"] = kBinHz;
  h["subepoch_seconds"] = 2.0;
  h["hop_seconds"] = 1.0;
  h["taper"] = {{"n", bank.n}, {"nw", bank.nw}, {"k", bank.k}, {"fft_length", kFftLength}};
  return detail::write_array_file("SOMS", h, t.values);
}

SpectrogramTensor parse_spectrogram_file(std::span<const std::uint8_t> bytes) {
  auto f = detail::parse_array_file("SOMS", bytes);
  SpectrogramTensor t;
  try {
    const auto shape = f.header.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3 || shape[1] != kSubEpochs || shape[2] != kFreqBins) {
      throw ShapeError("spectrogram file shape must be n x 29 x 257");
    }
    t.n_epochs = shape[0];
    t.view = f.header.at("view").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(12, std::string("spectrogram header: ") + e.what());
  }
  if (f.values.size() != t.n_epochs * kSubEpochs * kFreqBins) {
    throw ParseError(bytes.size(), "spectrogram payload does not match its shape");
  }
  t.values = std::move(f.values);
  return t;
}

std::string spectrogram_csv(const SpectrogramTensor& t) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,subepoch_start_s";
  for (std::size_t k = 0; k < kFreqBins; ++k) os << ',' << bin_frequency(k);
  os << '\n';
  for (std::size_t e = 0; e < t.n_epochs; ++e) {
    for (std::size_t s = 0; s < kSubEpochs; ++s) {
      os << e << ',' << s;
      const float* row = t.values.data() + (e * kSubEpochs + s) * kFreqBins;
      for (std::size_t k = 0; k < kFreqBins; ++k) os << ',' << row[k];
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace somnus
