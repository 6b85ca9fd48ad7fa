// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "somnus/recording.hpp"

namespace somnus {

using Bytes = std::vector<std::uint8_t>;

/// Parses a plain EDF file (256-byte fixed header, one 256-byte header per
/// signal, then data records of 16-bit little-endian samples). Every signal
/// becomes a channel, annotation signals included; downstream code only reads
/// the EEG labels. Digital samples are scaled to physical units with
///   p = (d - dmin) * (pmax - pmin) / (dmax - dmin) + pmin.
///
/// Throws ParseError with the byte offset for: a short or inconsistent header
/// length, a version field other than "0       ", equal digital (or
/// physical) limits, invalid numeric fields, and a data section whose size is
/// not a whole number of records.
Recording parse_edf(std::span<const std::uint8_t> bytes, std::string id = {});

/// Inverse of parse_edf. Header text fields captured at parse time are
/// reproduced verbatim, so parse_edf followed by write_edf is the identity on
/// a conforming file. Recordings without EDF metadata are written with 1 s
/// records. Throws RangeError for a sample that does not quantize into the
/// channel's digital range and ShapeError when a channel does not fill whole
/// records.
Bytes write_edf(const Recording& r);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace somnus
