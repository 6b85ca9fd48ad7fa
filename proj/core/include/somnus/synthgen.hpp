// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "somnus/hypnogram.hpp"
#include "somnus/recording.hpp"

namespace somnus {

/// Relative power per band; the five weights sum to one.
struct BandWeights {
  double delta = 0.0;      // 0.5-4 Hz
  double theta = 0.0;      // 4-8 Hz
  double alpha = 0.0;      // 8-12 Hz
  double sigma = 0.0;      // 12-20 Hz
  double broadband = 0.0;  // 0.5-50 Hz floor

  double sum() const { return delta + theta + alpha + sigma + broadband; }
  std::array<double, 5> as_array() const { return {delta, theta, alpha, sigma, broadband}; }
};

struct StageSignature {
  Stage stage = Stage::W;
  BandWeights band_weights;
  double amplitude_uv = 20.0;  // per-epoch RMS before spindles
  bool spindle_burst = false;

  /// Throws ValidationError on negative weights, weights not summing to
  /// 1 ± 1e-9, negative amplitude, or spindles on a stage other than N2.
  void validate() const;
};

using SignatureSet = std::map<Stage, StageSignature>;

/// Default per-stage signatures: alpha-rich wake, theta N1, spindling N2,
/// delta-dominated N3, low-voltage mixed REM.
SignatureSet default_signatures();
/// Throws ValidationError unless there is exactly one valid signature per stage.
void validate_signatures(const SignatureSet& sig);

struct TransitionModel {
  std::array<std::array<double, kNumStages>, kNumStages> matrix{};
  std::array<double, kNumStages> initial{};

  /// Throws ValidationError for negative entries or rows (or the initial
  /// vector) not summing to 1 ± 1e-9.
  void validate() const;
  static TransitionModel default_model();
};

/// Per-epoch departures from the stage signature. They are what makes single
/// epochs ambiguous while the stage sequence stays informative.
struct SynthJitter {
  double weight_sigma = 0.50;     // log-normal spread of each band weight
  double amplitude_sigma = 0.20;  // log-normal spread of epoch amplitude
  double blend_max = 0.60;        // epoch weights blend towards a random other stage by U(0, blend_max)
  double subject_sigma = 0.15;    // log-normal amplitude factor per recording
  double channel_coherence = 0.5; // share of each channel's power from a common source
};

struct SynthParams {
  SignatureSet signatures = default_signatures();
  TransitionModel transitions = TransitionModel::default_model();
  SynthJitter jitter;
};

/// First-order Markov chain sample. Deterministic in (seed, n_epochs, tm).
/// Throws ParameterError for n_epochs == 0 and ValidationError for an invalid
/// model.
Hypnogram gen_hypnogram(std::uint64_t seed, std::size_t n_epochs, const TransitionModel& tm);

/// Six derived channels at 200 Hz, 6000 samples per epoch of `h`. Each epoch is
/// a sum of band-limited Gaussian noise components shaped by the (jittered)
/// stage weights; N2 epochs get 1-3 sigma bursts of 0.5-1.5 s. Samples are
/// clipped to ±8 × the stage amplitude. The recording carries `h` as its
/// expert hypnogram and the generator identity in its metadata.
Recording gen_recording(const Hypnogram& h, std::uint64_t seed, const SignatureSet& sig,
                        const SynthJitter& jitter = {}, unsigned threads = 1);

/// Key-value text form ("key = value", '#' comments). Keys:
///   signature.<S>.{delta,theta,alpha,sigma,broadband,amplitude_uv,spindle_burst}
///   transition.<S> = five row probabilities in W N1 N2 N3 R order
///   initial = five probabilities
///   jitter.{weight_sigma,amplitude_sigma,blend_max,subject_sigma,channel_coherence}
/// Unspecified keys keep their defaults. Errors name the offending line.
SynthParams parse_synth_params(std::string_view text);
std::string format_synth_params(const SynthParams& p);

/// One line per generated recording: id, seed, epochs, file names.
struct FixtureEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::size_t n_epochs = 0;
  std::string recording_file;
  std::string sidecar_file;
};
std::string format_fixture_manifest(const std::vector<FixtureEntry>& entries);
std::vector<FixtureEntry> parse_fixture_manifest(std::string_view text);

}  // namespace somnus
