// SPDX-License-Identifier: Apache-2.0
#include "somnus/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "somnus/error.hpp"

namespace somnus {

SleepReport sleep_stats(const Hypnogram& h) {
  if (h.empty()) throw DataError("sleep statistics need a nonempty hypnogram");
  SleepReport r;
  const double per_epoch = h.epoch_seconds / 60.0;
  std::array<std::size_t, kNumStages> counts{};
  for (Stage s : h.stages) ++counts[static_cast<std::size_t>(stage_index(s))];
  std::size_t sleep_epochs = 0;
  for (Stage s : kAllStages) {
    const std::size_t c = counts[static_cast<std::size_t>(stage_index(s))];
    r.minutes_per_stage[s] = per_epoch * static_cast<double>(c);
    if (is_sleep(s)) sleep_epochs += c;
  }
  r.total_recording_min = per_epoch * static_cast<double>(h.size());
  r.total_sleep_min = per_epoch * static_cast<double>(sleep_epochs);
  r.sleep_efficiency = static_cast<double>(sleep_epochs) / static_cast<double>(h.size());
  for (std::size_t t = 1; t < h.size(); ++t) {
    const Stage a = h[t - 1], b = h[t];
    if (is_sleep(a) && (b == Stage::W || b == Stage::N1) && a != b) ++r.fragmentation_transitions;
  }
  r.no_sleep = sleep_epochs == 0;
  if (!r.no_sleep) r.fragmentation_index = static_cast<double>(r.fragmentation_transitions) / (r.total_sleep_min / 60.0);
  return r;
}

std::vector<double> confidence_of(std::span<const StageProbs> probs) {
  std::vector<double> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(*std::max_element(p.begin(), p.end()));
  return out;
}

std::vector<double> margin_of(std::span<const StageProbs> probs) {
  std::vector<double> out;
  out.reserve(probs.size());
  for (auto p : probs) {
    std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
    out.push_back(p[0] - p[1]);
  }
  return out;
}

std::vector<double> entropy_of(std::span<const StageProbs> probs) {
  std::vector<double> out;
  out.reserve(probs.size());
  for (const auto& p : probs) {
    double h = 0.0;
    for (double v : p) {
      if (v > 0.0) h -= v * std::log(v);
    }
    out.push_back(h);
  }
  return out;
}

Hypnogram hypnogram_from_probs(std::span<const StageProbs> probs) {
  Hypnogram h;
  h.stages.reserve(probs.size());
  for (const auto& p : probs) {
    h.stages.push_back(stage_from_index(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin())));
  }
  h.confidence = confidence_of(probs);
  return h;
}

std::string sleep_report_json(const SleepReport& r) {
  nlohmann::json j;
  nlohmann::json minutes = nlohmann::json::object();
  for (const auto& [s, m] : r.minutes_per_stage) minutes[std::string(stage_symbol(s))] = m;
  j["minutes_per_stage"] = minutes;
  j["total_recording_min"] = r.total_recording_min;
  j["total_sleep_min"] = r.total_sleep_min;
  j["sleep_efficiency"] = r.sleep_efficiency;
  j["fragmentation_index"] = r.fragmentation_index;
  j["fragmentation_transitions"] = r.fragmentation_transitions;
  j["fragmentation_definition"] = kFragmentationDefinition;
  j["no_sleep"] = r.no_sleep;
  return j.dump();
}

std::string format_sleep_report(const SleepReport& r) {
  std::ostringstream os;
  char buf[96];
  for (Stage s : kAllStages) {
    std::snprintf(buf, sizeof buf, "%-3s %8.1f min\n", std::string(stage_symbol(s)).c_str(), r.minutes_per_stage.at(s));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "recording  %8.1f min\nsleep      %8.1f min\n", r.total_recording_min, r.total_sleep_min);
  os << buf;
  std::snprintf(buf, sizeof buf, "efficiency %8.4f\n", r.sleep_efficiency);
  os << buf;
  std::snprintf(buf, sizeof buf, "fragmentation %.4f /h (%zu transitions)%s\n", r.fragmentation_index,
                r.fragmentation_transitions, r.no_sleep ? " [no sleep epochs]" : "");
  os << buf;
  os << "fragmentation definition: " << kFragmentationDefinition << '\n';
  return os.str();
}

}  // namespace somnus
