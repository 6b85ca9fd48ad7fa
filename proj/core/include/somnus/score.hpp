// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnus/recording.hpp"
#include "somnus/report.hpp"
#include "somnus/train.hpp"

namespace somnus::score {

/// Epochs scored per step. Fixed so that every caller (CLI, service, tests)
/// runs the identical sequence of batched forward passes.
inline constexpr std::size_t kChunkEpochs = 32;

struct ScoreOptions {
  unsigned threads = 1;
};

/// Called after each chunk with the index of its first epoch and its
/// probabilities. Chunks arrive in order.
using ChunkCallback = std::function<void(std::size_t first, std::span<const StageProbs> probs)>;

struct ScoreResult {
  std::string recording_id;
  std::string model_name;
  std::size_t epoch_count = 0;
  std::vector<StageProbs> probs;
  Hypnogram predicted;  // confidence = max probability
  std::vector<double> margin;
  std::vector<double> entropy;
  SleepReport report;
  std::optional<Hypnogram> expert;
  std::vector<std::size_t> disagreements;  // only meaningful with an expert hypnogram
};

/// Derives the montage (resampling to 200 Hz), computes each chunk's inputs,
/// normalizes them with the model's statistics and predicts. DataError
/// "no complete epochs" for a recording shorter than one epoch; DataError
/// when an attached expert hypnogram does not match the epoch count.
ScoreResult score_recording(const train::TrainedModel& m, const Recording& raw, const ScoreOptions& opt = {},
                            const ChunkCallback& on_chunk = {});

/// {t : expert[t] != predicted[t]}; DataError on a length mismatch.
std::vector<std::size_t> disagreements(const Hypnogram& expert, const Hypnogram& predicted);

/// One line per epoch: "t<TAB>stage<TAB>confidence<TAB>pW pN1 pN2 pN3 pR", six decimals.
std::string format_epoch_line(std::size_t t, const StageProbs& p);
inline constexpr const char* kEpochLineHeader = "epoch\tstage\tconfidence\tp_W\tp_N1\tp_N2\tp_N3\tp_R";

/// JSON document of a finished scoring run (keys sorted, full precision).
std::string score_document(const ScoreResult& r);

}  // namespace somnus::score
