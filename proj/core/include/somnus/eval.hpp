// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "somnus/hypnogram.hpp"

namespace somnus::eval {

using CountTable = std::array<std::array<std::uint64_t, kNumStages>, kNumStages>;
using RateTable = std::array<std::array<double, kNumStages>, kNumStages>;

/// Rows are expert stages, columns predicted stages, both in W N1 N2 N3 R order.
struct ConfusionMatrix {
  CountTable counts{};
  std::uint64_t n_total = 0;

  static ConfusionMatrix from_counts(const CountTable& c);
  std::uint64_t row_sum(std::size_t r) const;
  std::uint64_t col_sum(std::size_t c) const;
  std::uint64_t trace() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  bool operator==(const ConfusionMatrix&) const = default;
};

struct NormalizedConfusion {
  RateTable rows{};                      // each occupied row sums to 1
  std::array<bool, kNumStages> empty{};  // rows with no expert epochs stay all zero
};

/// DataError for a length mismatch or empty input.
ConfusionMatrix confusion(const Hypnogram& expert, const Hypnogram& pred);
ConfusionMatrix confusion(std::span<const int> expert, std::span<const int> pred);
NormalizedConfusion normalize_rows(const ConfusionMatrix& cm);

struct KappaResult {
  double p0 = 0.0;
  double pe = 0.0;
  double kappa = 0.0;
  bool degenerate = false;  // pe == 1: kappa is 1 when p0 == 1, else 0
};

/// DataError when n_total is zero.
KappaResult kappa(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

/// Per-stage recall (row-wise) and precision (column-wise). A stage with no
/// support in the relevant margin gets 0 and defined = false.
struct StageScores {
  std::array<double, kNumStages> recall{};
  std::array<double, kNumStages> precision{};
  std::array<bool, kNumStages> recall_defined{};
  std::array<bool, kNumStages> precision_defined{};
  std::array<std::uint64_t, kNumStages> support{};
};
StageScores stage_scores(const ConfusionMatrix& cm);

struct RecordingScore {
  std::string id;
  std::uint64_t epochs = 0;
  double accuracy = 0.0;
  KappaResult kappa;
};

/// Epoch-weighted (pooled) figures are primary; per-recording means are
/// reported alongside.
struct MetricsReport {
  ConfusionMatrix pooled;
  KappaResult kappa;
  double accuracy = 0.0;
  NormalizedConfusion normalized;
  StageScores stages;
  std::vector<RecordingScore> recordings;
  double mean_recording_accuracy = 0.0;
  double mean_recording_kappa = 0.0;
};

struct LabelledPair {
  std::string id;
  Hypnogram expert;
  Hypnogram predicted;
};
MetricsReport evaluate(std::span<const LabelledPair> pairs);

/// Plain-text report with fixed six-decimal numbers, stable byte-for-byte for
/// identical inputs.
std::string format_metrics_report(const MetricsReport& m);

}  // namespace somnus::eval
