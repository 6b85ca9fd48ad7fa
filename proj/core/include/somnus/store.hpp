// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "somnus/train.hpp"

namespace somnus::store {

/// "SOMD" | u32 format_version | u32 metadata length | UTF-8 JSON metadata |
/// f64 LE blobs (parameters in declared order, then norm mean, norm stdev) |
/// u32 CRC-32 of every preceding byte.
std::vector<std::uint8_t> save_model(const train::TrainedModel& m);

/// ParseError for a bad magic or truncation, VersionError for an unknown
/// format_version (checked before the checksum), ChecksumError on mismatch,
/// DataError for inconsistent metadata or spectral provenance.
train::TrainedModel load_model(std::span<const std::uint8_t> bytes);

void save_model_file(const std::filesystem::path& p, const train::TrainedModel& m);
train::TrainedModel load_model_file(const std::filesystem::path& p);

/// A directory of "<name>.somd" files.
class ModelStore {
 public:
  explicit ModelStore(std::filesystem::path dir);
  const std::filesystem::path& dir() const { return dir_; }
  /// Sorted model names.
  std::vector<std::string> list() const;
  bool contains(const std::string& name) const;
  /// IoError when absent.
  train::TrainedModel load(const std::string& name) const;
  void save(const std::string& name, const train::TrainedModel& m) const;
  std::filesystem::path path_of(const std::string& name) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace somnus::store
