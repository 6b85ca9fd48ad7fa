// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "somnus/edf.hpp"
#include "somnus/recording.hpp"

namespace somnus {

/// Internal recording container:
///
///   "SOMN" | u32 version | u32 header length | UTF-8 JSON header |
///   f32 LE samples, channel-major
///
/// The JSON header lists id, sample rate, n_samples, channel labels with their
/// physical and digital ranges, and the recording's metadata map.
inline constexpr std::uint32_t kContainerVersion = 1;

Bytes write_container(const Recording& r);
/// Throws ParseError (bad magic, truncation), VersionError (unknown version).
Recording parse_container(std::span<const std::uint8_t> bytes);

/// Loads a recording from .edf or .somn, sniffing the magic bytes, and
/// attaches `sidecar_path` as the expert hypnogram when it is non-empty.
Recording load_recording(const std::string& path, const std::string& sidecar_path = {});
/// Same, from bytes already in memory.
Recording load_recording_bytes(std::span<const std::uint8_t> bytes, std::string id);

}  // namespace somnus
