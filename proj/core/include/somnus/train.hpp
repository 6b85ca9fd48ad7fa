// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnus/eval.hpp"
#include "somnus/features.hpp"
#include "somnus/nn.hpp"
#include "somnus/recording.hpp"
#include "somnus/report.hpp"
#include "somnus/rng.hpp"
#include "somnus/spectral.hpp"

namespace somnus::train {

// ---------------------------------------------------------------------------
// Model inputs

/// One recording as model-ready rows: n_epochs x dim, not yet normalized.
struct RecordingData {
  std::string id;
  nn::Representation representation = nn::Representation::Expert;
  std::size_t n_epochs = 0;
  std::size_t dim = 0;
  std::vector<double> inputs;  // row-major
  std::vector<int> labels;     // empty when the recording has no expert hypnogram

  std::span<const double> row(std::size_t e) const {
    return std::span<const double>(inputs).subspan(e * dim, dim);
  }
};

/// Writes the model input of one epoch: the expert vector or the dB average
/// spectrogram (both rounded through f32 like their export files), or the
/// six-channel mean waveform.
void epoch_input(const EpochChannels& ch, const MultitaperPsd& psd, nn::Representation rep, std::span<double> out);

/// Inputs of every whole epoch of a derived 200 Hz recording. Labels come
/// from the expert hypnogram when present. Independent of `threads`.
RecordingData recording_inputs(const Recording& r, nn::Representation rep, unsigned threads = 1);

/// Normalization fitted on training rows only: expert features per column,
/// spectrogram per frequency bin (pooled over sub-epochs), raw waveform as a
/// single scalar. The result always has one entry per input element.
NormStats fit_input_norm(std::span<const RecordingData> train, nn::Representation rep);
void normalize(RecordingData& d, const NormStats& s);

struct ItemRef {
  std::size_t recording = 0;
  std::size_t epoch = 0;
};

/// Lookback windows of the given items as a batch (window padding as in
/// nn::lookback_window).
nn::Batch gather(std::span<const RecordingData> recs, std::span<const ItemRef> items, std::size_t lookback);

// ---------------------------------------------------------------------------
// Splits

struct SplitPlan {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
};

/// Shuffles the ids by seed and assigns floor(f * n) to validation and test,
/// the rest to training. DataError for an empty or duplicated id list;
/// ParameterError unless the fractions are nonnegative and sum to 1.
SplitPlan make_split(std::vector<std::string> ids, std::array<double, 3> train_val_test, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;  // passes over the training items
  std::size_t patience = 5;     // validation evaluations without improvement
  double clip_norm = 5.0;       // global gradient norm cap; 0 disables
  bool class_weighting = false; // inverse-frequency class weights
  std::uint64_t seed = 0;
  unsigned threads = 1;         // validation inference only; training results do not depend on it
};

struct History {
  std::vector<double> train_loss;  // mean minibatch loss per pass
  std::vector<double> val_loss;    // [0] at initialization, then one per pass
  std::size_t best_eval = 0;       // index into val_loss
  std::size_t steps = 0;
  bool early_stopped = false;
};

/// Spectral parameters the inputs were computed with; checked at load.
struct SpectralProvenance {
  std::size_t window = kWindowSamples;
  std::size_t hop = kHopSamples;
  std::size_t fft_length = kFftLength;
  double nw = kCanonicalNw;
  std::size_t tapers = kCanonicalTapers;
  double sample_rate_hz = kCanonicalRateHz;
  bool operator==(const SpectralProvenance&) const = default;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr const char* kOptimizer = "sgd-momentum";

struct TrainedModel {
  std::string name;
  std::uint32_t format_version = kModelFormatVersion;
  nn::ModelSpec spec;
  nn::ParamSet params;
  NormStats norm;
  SpectralProvenance spectral;
  TrainConfig config;
  std::string optimizer = kOptimizer;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_kappa = 0.0;
  History history;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

/// Minibatch SGD with momentum and early stopping on validation cross-entropy.
/// Normalization is fitted on `training` only. The best-validation parameters
/// are returned. TrainingError with the step index if the loss or a gradient
/// becomes non-finite. Deterministic in (spec, data, config).
TrainedModel fit(const nn::ModelSpec& spec, std::span<const RecordingData> training,
                 std::span<const RecordingData> validation, const TrainConfig& config);

/// Stage probabilities for every epoch of a recording (inputs not normalized).
std::vector<StageProbs> predict(const TrainedModel& m, const RecordingData& d, unsigned threads = 1);

/// Streaming form: inputs are normalized once; probabilities for epochs
/// [first, last) can then be requested in any order.
class Predictor {
 public:
  Predictor(const TrainedModel& m, RecordingData d);
  std::size_t epochs() const { return data_.n_epochs; }
  std::vector<StageProbs> run(std::size_t first, std::size_t last, unsigned threads = 1) const;

 private:
  const TrainedModel* model_;
  nn::Network net_;
  RecordingData data_;
};

// ---------------------------------------------------------------------------
// Random search

/// The value sets searched over. The learning-rate list is kept verbatim,
/// including its repeated 0.001; sampling uses the deduplicated list.
struct SearchSpace {
  std::vector<double> learning_rate = {0.01, 0.001, 0.001, 0.0001, 0.00001};
  std::vector<std::size_t> lookback = {3, 5, 10, 20, 30};
  std::vector<double> dropout_rate = {0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  std::vector<std::size_t> hidden_units = {100, 200, 400, 800, 1000, 2000, 5000};
  std::vector<std::size_t> n_layers = {1, 2, 3, 5, 7, 8, 15};
  std::vector<std::size_t> filter_size = {3, 5, 7};
  std::size_t n_trials = 50;

  std::vector<double> sampling_learning_rates() const;
  void validate() const;  // ParameterError for an empty set
};

struct TrialConfig {
  double learning_rate = 0.0;
  std::size_t lookback = 1;
  double dropout_rate = 0.0;
  std::size_t hidden_units = 0;
  std::size_t n_layers = 0;
  std::size_t filter_size = 3;
  std::uint64_t seed = 0;
};

/// One independent uniform draw from every set.
TrialConfig sample_trial(const SearchSpace& space, Rng& rng);

/// Caps applied by the desk preset at fit time.
struct SizeCaps {
  std::size_t max_hidden = 64;
  std::size_t max_layers = 2;
  std::size_t max_lookback = 10;
  std::size_t max_epochs = 30;
};

/// The model a sampled trial trains: hidden units and layers go to the MLP or
/// LSTM stack, filter size to conv layers, dropout_rate to keep = 1 - rate.
/// Desk caps apply only with Preset::Desk.
nn::ModelSpec trial_spec(const TrialConfig& t, nn::Family f, nn::Representation r, nn::Preset p,
                         const SizeCaps& caps = {});

struct Trial {
  std::size_t index = 0;
  TrialConfig sampled;
  nn::ModelSpec effective;
  bool ok = false;
  std::string error;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_kappa = 0.0;
  std::size_t steps = 0;
};

struct SearchResult {
  std::vector<Trial> ranked;             // by kappa, then accuracy (both descending), then index
  std::optional<TrainedModel> best;      // absent only when every trial failed
  std::vector<std::string> manifest;     // one JSON record per trial, in trial order
};

struct SearchOptions {
  nn::Family family = nn::Family::LSTM;
  nn::Representation representation = nn::Representation::Expert;
  nn::Preset preset = nn::Preset::Desk;
  SizeCaps caps;
  std::size_t budget = 50;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // trials in parallel
  TrainConfig base;      // learning rate and seed are overwritten per trial
};

/// Independent trials with seeds Rng::mix(seed, index); a failed trial is
/// recorded and the search continues. ParameterError for budget 0.
SearchResult random_search(const SearchSpace& space, std::span<const RecordingData> training,
                           std::span<const RecordingData> validation, const SearchOptions& opt);

/// Replays one manifest record's configuration as a fit.
TrainedModel replay_trial(const Trial& t, std::span<const RecordingData> training,
                          std::span<const RecordingData> validation, const SearchOptions& opt);

std::string trial_manifest_line(const Trial& t, const SearchOptions& opt, const SearchSpace& space);

}  // namespace somnus::train
