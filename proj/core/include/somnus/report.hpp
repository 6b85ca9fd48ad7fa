// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "somnus/hypnogram.hpp"

namespace somnus {

using StageProbs = std::array<double, kNumStages>;

/// Transitions from any sleep stage into W or N1, per hour of sleep.
inline constexpr const char* kFragmentationDefinition =
    "count of epoch transitions from N1/N2/N3/R into W or N1 (N1->N1 excluded), divided by total sleep hours";

struct SleepReport {
  std::map<Stage, double> minutes_per_stage;
  double total_recording_min = 0.0;
  double total_sleep_min = 0.0;
  double sleep_efficiency = 0.0;
  double fragmentation_index = 0.0;
  std::size_t fragmentation_transitions = 0;
  bool no_sleep = false;  // fragmentation is reported as 0
};

/// DataError for an empty hypnogram.
SleepReport sleep_stats(const Hypnogram& h);

/// Max probability per epoch.
std::vector<double> confidence_of(std::span<const StageProbs> probs);
/// Top-1 minus top-2 probability.
std::vector<double> margin_of(std::span<const StageProbs> probs);
/// Shannon entropy in nats.
std::vector<double> entropy_of(std::span<const StageProbs> probs);

/// argmax per epoch, ties to the lower stage index.
Hypnogram hypnogram_from_probs(std::span<const StageProbs> probs);

/// JSON document; numbers are full precision, keys sorted.
std::string sleep_report_json(const SleepReport& r);
/// Human-readable summary printed by the CLI.
std::string format_sleep_report(const SleepReport& r);

}  // namespace somnus
