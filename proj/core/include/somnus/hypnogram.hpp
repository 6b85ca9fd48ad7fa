// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace somnus {

/// Sleep stages in canonical order. The integer value is the class index used
/// by every model and confusion matrix.
enum class Stage : int { W = 0, N1 = 1, N2 = 2, N3 = 3, R = 4 };

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::array<Stage, kNumStages> kAllStages = {
    Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R};

std::string_view stage_symbol(Stage s);
/// Throws DataError for anything outside {W,N1,N2,N3,R}.
Stage parse_stage(std::string_view symbol);
inline int stage_index(Stage s) { return static_cast<int>(s); }
Stage stage_from_index(int index);
inline bool is_sleep(Stage s) { return s != Stage::W; }

/// Per-epoch stage sequence, 30 s epochs, with optional per-epoch confidence.
struct Hypnogram {
  std::vector<Stage> stages;
  std::optional<std::vector<double>> confidence;
  double epoch_seconds = 30.0;

  std::size_t size() const { return stages.size(); }
  bool empty() const { return stages.empty(); }
  Stage operator[](std::size_t t) const { return stages[t]; }

  /// Throws ValidationError if confidence is present with a different length
  /// or holds values outside [0,1].
  void validate() const;

  bool operator==(const Hypnogram&) const = default;
};

/// Sidecar text form: one stage symbol per line.
std::string format_sidecar(const Hypnogram& h);
/// Blank trailing lines are tolerated; every other line must be a stage
/// symbol. Errors name the 1-based line.
Hypnogram parse_sidecar(std::string_view text);

Hypnogram read_sidecar(const std::string& path);
void write_sidecar(const std::string& path, const Hypnogram& h);

}  // namespace somnus
