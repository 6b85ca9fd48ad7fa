// SPDX-License-Identifier: Apache-2.0
#include "somnus/hypnogram.hpp"

#include <fstream>
#include <sstream>

#include "somnus/error.hpp"

namespace somnus {

std::string_view stage_symbol(Stage s) {
  switch (s) {
    case Stage::W: return "W";
    case Stage::N1: return "N1";
    case Stage::N2: return "N2";
    case Stage::N3: return "N3";
    case Stage::R: return "R";
  }
  return "?";
}

Stage parse_stage(std::string_view symbol) {
  for (Stage s : kAllStages) {
    if (symbol == stage_symbol(s)) return s;
  }
  throw DataError("unknown stage symbol '" + std::string(symbol) + "'");
}

Stage stage_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kNumStages)) {
    throw DataError("stage index out of range: " + std::to_string(index));
  }
  return static_cast<Stage>(index);
}

void Hypnogram::validate() const {
  if (!confidence) return;
  if (confidence->size() != stages.size()) {
    throw ValidationError("confidence length " +
                          std::to_string(confidence->size()) +
                          " does not match hypnogram length " +
                          std::to_string(stages.size()));
  }
  for (double c : *confidence) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw ValidationError("confidence outside [0,1]");
    }
  }
}

std::string format_sidecar(const Hypnogram& h) {
  std::string out;
  out.reserve(h.size() * 3);
  for (Stage s : h.stages) {
    out += stage_symbol(s);
    out += '\n';
  }
  return out;
}

Hypnogram parse_sidecar(std::string_view text) {
  Hypnogram h;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::size_t blank_run = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      ++blank_run;
      continue;
    }
    if (blank_run > 0) {
      throw DataError("sidecar line " + std::to_string(line_no - blank_run) +
                      ": empty line inside hypnogram");
    }
    try {
      h.stages.push_back(parse_stage(line));
    } catch (const DataError& e) {
      throw DataError("sidecar line " + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return h;
}

Hypnogram read_sidecar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_sidecar(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_sidecar(const std::string& path, const Hypnogram& h) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << format_sidecar(h);
}

}  // namespace somnus
