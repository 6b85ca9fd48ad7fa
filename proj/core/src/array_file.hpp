// SPDX-License-Identifier: Apache-2.0
// Shared layout of the exported array files:
//   magic[4] | u32 version | u32 header length | JSON header | f32 LE values
#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "somnus/error.hpp"

namespace somnus::detail {

inline constexpr std::uint32_t kArrayFileVersion = 1;

inline std::vector<std::uint8_t> write_array_file(const char (&magic)[5],
                                                  const nlohmann::json& header,
                                                  std::span<const float> values) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(12 + text.size() + values.size() * 4);
  out.insert(out.end(), magic, magic + 4);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u32(kArrayFileVersion);
  put_u32(static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(float));
  return out;
}

struct ArrayFile {
  nlohmann::json header;
  std::vector<float> values;
};

inline ArrayFile parse_array_file(const char (&magic)[5], std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw ParseError(bytes.size(), "array file truncated before header");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw ParseError(0, std::string("bad magic, expected ") + magic);
  }
  auto get_u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
  };
  if (get_u32(4) != kArrayFileVersion) {
    throw VersionError("unknown array file version " + std::to_string(get_u32(4)));
  }
  const std::size_t hlen = get_u32(8);
  if (bytes.size() < 12 + hlen) throw ParseError(bytes.size(), "array file header truncated");
  ArrayFile f;
  try {
    f.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(12, std::string("array file header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = bytes.size() - 12 - hlen;
  if (payload % 4 != 0) throw ParseError(bytes.size(), "array payload is not whole floats");
  f.values.resize(payload / 4);
  std::memcpy(f.values.data(), bytes.data() + 12 + hlen, payload);
  return f;
}

}  // namespace somnus::detail
