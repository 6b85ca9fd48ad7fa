// SPDX-License-Identifier: Apache-2.0
#include "somnus/synthgen.hpp"

#include <charconv>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "somnus/error.hpp"
#include "somnus/fft.hpp"
#include "somnus/parallel.hpp"
#include "somnus/rng.hpp"

namespace somnus {

namespace {

constexpr std::size_t kSynthFft = 8192;
constexpr std::array<const char*, 5> kBandKeys = {"delta", "theta", "alpha", "sigma", "broadband"};
constexpr std::array<std::array<double, 2>, 5> kBandEdges = {{
    {0.5, 4.0}, {4.0, 8.0}, {8.0, 12.0}, {12.0, 20.0}, {0.5, 50.0}}};

double& weight_ref(BandWeights& w, std::size_t b) {
  switch (b) {
    case 0: return w.delta;
    case 1: return w.theta;
    case 2: return w.alpha;
    case 3: return w.sigma;
    default: return w.broadband;
  }
}

BandWeights weights(double d, double t, double a, double s, double b) { return {d, t, a, s, b}; }

}  // namespace

void StageSignature::validate() const {
  const auto w = band_weights.as_array();
  for (double v : w) {
    if (!(v >= 0.0)) throw ValidationError("signature " + std::string(stage_symbol(stage)) + ": negative band weight");
  }
  if (std::fabs(band_weights.sum() - 1.0) > 1e-9) {
    throw ValidationError("signature " + std::string(stage_symbol(stage)) + ": band weights sum to " +
                          std::to_string(band_weights.sum()));
  }
  if (!(amplitude_uv >= 0.0)) throw ValidationError("signature amplitude must be nonnegative");
  if (spindle_burst && stage != Stage::N2) throw ValidationError("spindle bursts are an N2 feature");
}

SignatureSet default_signatures() {
  SignatureSet s;
  s[Stage::W] = {Stage::W, weights(0.10, 0.12, 0.38, 0.10, 0.30), 22.0, false};
  s[Stage::N1] = {Stage::N1, weights(0.22, 0.38, 0.12, 0.08, 0.20), 26.0, false};
  s[Stage::N2] = {Stage::N2, weights(0.40, 0.26, 0.06, 0.16, 0.12), 34.0, true};
  s[Stage::N3] = {Stage::N3, weights(0.74, 0.12, 0.03, 0.04, 0.07), 60.0, false};
  s[Stage::R] = {Stage::R, weights(0.18, 0.34, 0.16, 0.06, 0.26), 21.0, false};
  return s;
}

void validate_signatures(const SignatureSet& sig) {
  if (sig.size() != kNumStages) throw ValidationError("need exactly five stage signatures");
  for (Stage st : kAllStages) {
    auto it = sig.find(st);
    if (it == sig.end()) throw ValidationError("no signature for stage " + std::string(stage_symbol(st)));
    if (it->second.stage != st) throw ValidationError("signature keyed by the wrong stage");
    it->second.validate();
  }
}

void TransitionModel::validate() const {
  auto check = [](const std::array<double, kNumStages>& row, const std::string& what) {
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw ValidationError(what + " has a negative probability");
      s += v;
    }
    if (std::fabs(s - 1.0) > 1e-9) throw ValidationError(what + " sums to " + std::to_string(s) + ", not 1");
  };
  for (std::size_t i = 0; i < kNumStages; ++i) {
    check(matrix[i], "transition row " + std::string(stage_symbol(stage_from_index(static_cast<int>(i)))));
  }
  check(initial, "initial distribution");
}

TransitionModel TransitionModel::default_model() {
  TransitionModel tm;
  //            W     N1    N2    N3    R
  tm.matrix = {{{0.90, 0.07, 0.01, 0.00, 0.02},
                {0.05, 0.85, 0.08, 0.00, 0.02},
                {0.02, 0.02, 0.90, 0.04, 0.02},
                {0.01, 0.01, 0.06, 0.92, 0.00},
                {0.03, 0.03, 0.02, 0.00, 0.92}}};
  tm.initial = {1.0, 0.0, 0.0, 0.0, 0.0};
  return tm;
}

namespace {
std::size_t draw(Rng& rng, const std::array<double, kNumStages>& p) {
  const double u = rng.uniform();
  double c = 0.0;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    c += p[i];
    if (u < c) return i;
  }
  // Rounding left u above the cumulative sum; take the last state with mass.
  for (std::size_t i = kNumStages; i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return 0;
}
}  // namespace

Hypnogram gen_hypnogram(std::uint64_t seed, std::size_t n_epochs, const TransitionModel& tm) {
  if (n_epochs == 0) throw ParameterError("gen_hypnogram: n_epochs must be at least 1");
  tm.validate();
  Rng rng(Rng::mix(seed, 0x4859504EULL));
  Hypnogram h;
  h.stages.reserve(n_epochs);
  std::size_t state = draw(rng, tm.initial);
  h.stages.push_back(stage_from_index(static_cast<int>(state)));
  for (std::size_t t = 1; t < n_epochs; ++t) {
    state = draw(rng, tm.matrix[state]);
    h.stages.push_back(stage_from_index(static_cast<int>(state)));
  }
  return h;
}

Recording gen_recording(const Hypnogram& h, std::uint64_t seed, const SignatureSet& sig,
                        const SynthJitter& jitter, unsigned threads) {
  if (h.empty()) throw ParameterError("gen_recording: empty hypnogram");
  for (Stage st : h.stages) {
    if (!sig.count(st)) throw DataError("gen_recording: no signature for stage " + std::string(stage_symbol(st)));
  }
  for (const auto& [st, s] : sig) s.validate();

  const Montage& m = Montage::standard();
  Recording r;
  r.id = "synth-" + std::to_string(seed);
  r.expert_hypnogram = h;
  r.metadata["generator"] = "somnus.synthgen/1";
  r.metadata["prng"] = Rng::kAlgorithm;
  r.metadata["seed"] = std::to_string(seed);
  r.channels.resize(kNumDerivedChannels);
  for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
    r.channels[c].label = std::string(m.derivations[c].name);
    r.channels[c].samples.assign(h.size() * kEpochSamples, 0.0f);
  }

  Rng subject_rng(Rng::mix(seed, 0x5355424AULL));
  const double subject_gain = std::exp(jitter.subject_sigma * subject_rng.normal());
  const Fft fft(kSynthFft);
  const double df = kCanonicalRateHz / static_cast<double>(kSynthFft);
  const double rho = std::clamp(jitter.channel_coherence, 0.0, 1.0);

  parallel_for(h.size(), threads, [&](std::size_t e) {
    Rng rng(Rng::mix(seed, e + 1));
    const StageSignature& s = sig.at(h[e]);
    if (s.amplitude_uv == 0.0) return;

    BandWeights w = s.band_weights;
    if (jitter.blend_max > 0.0) {
      const auto other_idx = static_cast<int>((stage_index(h[e]) + 1 + static_cast<int>(rng.below(kNumStages - 1))) %
                                              static_cast<int>(kNumStages));
      const auto it = sig.find(stage_from_index(other_idx));
      const double mix = rng.uniform(0.0, jitter.blend_max);
      if (it != sig.end()) {
        for (std::size_t b = 0; b < 5; ++b) {
          weight_ref(w, b) = (1.0 - mix) * weight_ref(w, b) + mix * it->second.band_weights.as_array()[b];
        }
      }
    }
    double total = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
      weight_ref(w, b) *= std::exp(jitter.weight_sigma * rng.normal());
      total += weight_ref(w, b);
    }
    const double amp = s.amplitude_uv * subject_gain * std::exp(jitter.amplitude_sigma * rng.normal());

    // Spectral amplitude per positive-frequency bin.
    std::vector<double> shape(kSynthFft / 2, 0.0);
    for (std::size_t b = 0; b < 5; ++b) {
      const double wb = weight_ref(w, b) / total;
      const double width = kBandEdges[b][1] - kBandEdges[b][0];
      for (std::size_t k = 1; k < kSynthFft / 2; ++k) {
        const double f = static_cast<double>(k) * df;
        if (f >= kBandEdges[b][0] && f < kBandEdges[b][1]) shape[k] += wb / width;
      }
    }
    for (double& v : shape) v = std::sqrt(v);

    std::vector<std::complex<double>> common(kSynthFft / 2);
    for (auto& z : common) z = {rng.normal(), rng.normal()};
    std::vector<std::complex<double>> buf(kSynthFft);
    std::array<std::vector<double>, kNumDerivedChannels> out;
    for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
      std::fill(buf.begin(), buf.end(), std::complex<double>{});
      for (std::size_t k = 1; k < kSynthFft / 2; ++k) {
        const std::complex<double> own{rng.normal(), rng.normal()};
        const std::complex<double> z = shape[k] * (std::sqrt(rho) * common[k] + std::sqrt(1.0 - rho) * own);
        buf[k] = z;
        buf[kSynthFft - k] = std::conj(z);
      }
      fft.inverse(buf);
      auto& x = out[c];
      x.resize(kEpochSamples);
      double mean = 0.0;
      for (std::size_t t = 0; t < kEpochSamples; ++t) {
        x[t] = buf[t].real();
        mean += x[t];
      }
      mean /= static_cast<double>(kEpochSamples);
      double var = 0.0;
      for (double& v : x) {
        v -= mean;
        var += v * v;
      }
      var /= static_cast<double>(kEpochSamples);
      const double g = var > 0.0 ? amp / std::sqrt(var) : 0.0;
      for (double& v : x) v *= g;
    }

    if (s.spindle_burst) {
      const std::size_t bursts = 1 + rng.below(3);
      for (std::size_t i = 0; i < bursts; ++i) {
        const double dur = rng.uniform(0.5, 1.5);
        const double freq = rng.uniform(12.0, 14.5);
        const double start = rng.uniform(0.0, kEpochSeconds - dur);
        const double peak = 1.2 * amp * rng.uniform(0.8, 1.2);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const auto t0 = static_cast<std::size_t>(start * kCanonicalRateHz);
        const auto len = static_cast<std::size_t>(dur * kCanonicalRateHz);
        for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
          const double gain = rng.uniform(0.8, 1.2);
          for (std::size_t t = 0; t < len && t0 + t < kEpochSamples; ++t) {
            const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) /
                                                    static_cast<double>(len));
            out[c][t0 + t] += gain * peak * env *
                              std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / kCanonicalRateHz + phase);
          }
        }
      }
    }

    const double bound = 8.0 * s.amplitude_uv;
    for (std::size_t c = 0; c < kNumDerivedChannels; ++c) {
      float* dst = r.channels[c].samples.data() + e * kEpochSamples;
      for (std::size_t t = 0; t < kEpochSamples; ++t) {
        dst[t] = static_cast<float>(std::clamp(out[c][t], -bound, bound));
      }
    }
  });
  return r;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v, std::size_t line) {
  double d = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw DataError("parameter line " + std::to_string(line) + ": '" + v + "' is not a number");
  }
  return d;
}

std::array<double, kNumStages> to_row(const std::string& v, std::size_t line) {
  std::istringstream is(v);
  std::array<double, kNumStages> row{};
  std::string tok;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (!(is >> tok)) throw DataError("parameter line " + std::to_string(line) + ": expected five probabilities");
    row[i] = to_double(tok, line);
  }
  if (is >> tok) throw DataError("parameter line " + std::to_string(line) + ": expected five probabilities");
  return row;
}

}  // namespace

SynthParams parse_synth_params(std::string_view text) {
  SynthParams p;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("parameter line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key.rfind("signature.", 0) == 0) {
      const auto dot = key.find('.', 10);
      if (dot == std::string::npos) throw DataError("parameter line " + std::to_string(line_no) + ": bad key " + key);
      Stage st;
      try {
        st = parse_stage(key.substr(10, dot - 10));
      } catch (const DataError& e) {
        throw DataError("parameter line " + std::to_string(line_no) + ": " + e.what());
      }
      const std::string field = key.substr(dot + 1);
      StageSignature& s = p.signatures[st];
      s.stage = st;
      bool matched = false;
      for (std::size_t b = 0; b < kBandKeys.size(); ++b) {
        if (field == kBandKeys[b]) {
          weight_ref(s.band_weights, b) = to_double(value, line_no);
          matched = true;
        }
      }
      if (field == "amplitude_uv") {
        s.amplitude_uv = to_double(value, line_no);
      } else if (field == "spindle_burst") {
        if (value != "true" && value != "false") {
          throw DataError("parameter line " + std::to_string(line_no) + ": spindle_burst must be true or false");
        }
        s.spindle_burst = value == "true";
      } else if (!matched) {
        throw DataError("parameter line " + std::to_string(line_no) + ": unknown signature field " + field);
      }
    } else if (key.rfind("transition.", 0) == 0) {
      Stage st;
      try {
        st = parse_stage(key.substr(11));
      } catch (const DataError& e) {
        throw DataError("parameter line " + std::to_string(line_no) + ": " + e.what());
      }
      p.transitions.matrix[static_cast<std::size_t>(stage_index(st))] = to_row(value, line_no);
    } else if (key == "initial") {
      p.transitions.initial = to_row(value, line_no);
    } else if (key == "jitter.weight_sigma") {
      p.jitter.weight_sigma = to_double(value, line_no);
    } else if (key == "jitter.amplitude_sigma") {
      p.jitter.amplitude_sigma = to_double(value, line_no);
    } else if (key == "jitter.blend_max") {
      p.jitter.blend_max = to_double(value, line_no);
    } else if (key == "jitter.subject_sigma") {
      p.jitter.subject_sigma = to_double(value, line_no);
    } else if (key == "jitter.channel_coherence") {
      p.jitter.channel_coherence = to_double(value, line_no);
    } else {
      throw DataError("parameter line " + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  validate_signatures(p.signatures);
  p.transitions.validate();
  return p;
}

std::string format_synth_params(const SynthParams& p) {
  std::ostringstream os;
  os.precision(17);
  os << "# somnus synthetic PSG parameters\n";
  for (const auto& [st, s] : p.signatures) {
    const std::string pre = "signature." + std::string(stage_symbol(st)) + ".";
    const auto w = s.band_weights.as_array();
    for (std::size_t b = 0; b < kBandKeys.size(); ++b) os << pre << kBandKeys[b] << " = " << w[b] << '\n';
    os << pre << "amplitude_uv = " << s.amplitude_uv << '\n';
    os << pre << "spindle_burst = " << (s.spindle_burst ? "true" : "false") << '\n';
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << "transition." << stage_symbol(stage_from_index(static_cast<int>(i))) << " =";
    for (double v : p.transitions.matrix[i]) os << ' ' << v;
    os << '\n';
  }
  os << "initial =";
  for (double v : p.transitions.initial) os << ' ' << v;
  os << '\n';
  os << "jitter.weight_sigma = " << p.jitter.weight_sigma << '\n';
  os << "jitter.amplitude_sigma = " << p.jitter.amplitude_sigma << '\n';
  os << "jitter.blend_max = " << p.jitter.blend_max << '\n';
  os << "jitter.subject_sigma = " << p.jitter.subject_sigma << '\n';
  os << "jitter.channel_coherence = " << p.jitter.channel_coherence << '\n';
  return os.str();
}

std::string format_fixture_manifest(const std::vector<FixtureEntry>& entries) {
  std::ostringstream os;
  os << "id\tseed\tepochs\trecording\tsidecar\n";
  for (const auto& e : entries) {
    os << e.id << '\t' << e.seed << '\t' << e.n_epochs << '\t' << e.recording_file << '\t' << e.sidecar_file << '\n';
  }
  return os.str();
}

std::vector<FixtureEntry> parse_fixture_manifest(std::string_view text) {
  std::vector<FixtureEntry> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    std::istringstream ls(line);
    FixtureEntry e;
    std::string seed, epochs;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, seed, '\t') || !std::getline(ls, epochs, '\t') ||
        !std::getline(ls, e.recording_file, '\t') || !std::getline(ls, e.sidecar_file)) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields");
    }
    e.seed = std::stoull(seed);
    e.n_epochs = std::stoull(epochs);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace somnus
