// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somnus/hypnogram.hpp"

namespace somnus {

inline constexpr double kCanonicalRateHz = 200.0;
inline constexpr double kEpochSeconds = 30.0;
inline constexpr std::size_t kEpochSamples = 6000;
inline constexpr std::size_t kNumDerivedChannels = 6;

/// Text fields of an EDF signal header that carry no numeric meaning for us.
/// Kept verbatim so an imported file can be written back byte for byte.
struct EdfSignalExtras {
  std::string transducer;    // 80 bytes
  std::string physical_dim;  // 8 bytes
  std::string prefilter;     // 80 bytes
  std::string reserved;      // 32 bytes
  std::int64_t samples_per_record = 0;
  // Numeric fields as they appeared in the file; reused on write when the
  // value they encode is unchanged.
  std::string physical_min_field;
  std::string physical_max_field;
  std::string digital_min_field;
  std::string digital_max_field;
  std::string samples_per_record_field;
};

struct EdfHeaderExtras {
  std::string patient;      // 80 bytes
  std::string recording;    // 80 bytes
  std::string start_date;   // 8 bytes, dd.mm.yy
  std::string start_time;   // 8 bytes, hh.mm.ss
  std::string reserved;     // 44 bytes
  std::string record_duration_field;  // 8 bytes, as written
  double record_duration_s = 1.0;
  std::string header_bytes_field;
  std::string num_records_field;
  std::string num_signals_field;
};

struct ChannelSignal {
  std::string label;
  std::vector<float> samples;  // physical units, µV
  double sample_rate_hz = kCanonicalRateHz;
  double physical_min = -3276.8;
  double physical_max = 3276.7;
  std::int32_t digital_min = -32768;
  std::int32_t digital_max = 32767;
  std::optional<EdfSignalExtras> edf;

  /// Throws ValidationError on a degenerate digital or physical range.
  void validate_ranges() const;
};

struct Recording {
  std::string id;
  std::vector<ChannelSignal> channels;
  std::optional<Hypnogram> expert_hypnogram;
  std::optional<std::string> start_time;
  std::optional<EdfHeaderExtras> edf;
  /// Free-form provenance (generator algorithm, seed, ...). Persisted by the
  /// internal container, ignored by EDF.
  std::map<std::string, std::string> metadata;

  /// Common sample rate; throws ValidationError when channels disagree.
  double sample_rate_hz() const;
  /// N_i; throws ValidationError when channels disagree.
  std::size_t n_samples() const;
  const ChannelSignal& channel(std::string_view label) const;
  const ChannelSignal* find_channel(std::string_view label) const;

  /// Checks the ingest invariants: equal lengths and rates, and an expert
  /// hypnogram (if any) whose length equals epoch_count.
  void validate() const;
};

/// floor(N / (rate * 30)). Trailing partial epochs are not counted.
std::size_t epoch_count(std::size_t n_samples, double sample_rate_hz = kCanonicalRateHz);
std::size_t epoch_count(const Recording& r);

/// Six contralateral-mastoid derivations grouped into three pairs.
struct Montage {
  struct Derivation {
    std::string_view name;
    std::string_view electrode;
    std::string_view reference;
  };
  struct PairGroup {
    std::string_view region;
    std::size_t left;   // index into derivations
    std::size_t right;
  };

  std::array<Derivation, kNumDerivedChannels> derivations;
  std::array<PairGroup, 3> pairs;

  static const Montage& standard();
  std::array<std::string_view, kNumDerivedChannels> names() const;
};

/// Linear interpolation onto a new uniform grid starting at t = 0. The output
/// length is floor(n * target / source).
std::vector<float> resample_linear(std::span<const float> x, double source_hz,
                                   double target_hz);

/// Brings a recording to the six derived channels at 200 Hz. A recording that
/// already carries the six derived labels passes through (resampled if
/// needed); otherwise the eight electrodes F3,F4,C3,C4,O1,O2,M1,M2 are
/// required. Throws MontageError naming the first absent electrode.
Recording derive_montage(const Recording& raw, const Montage& m = Montage::standard());

/// Samples of one epoch of one channel; the epoch must be complete.
std::span<const float> epoch_view(const ChannelSignal& c, std::size_t epoch);

}  // namespace somnus
