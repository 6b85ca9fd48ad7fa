// SPDX-License-Identifier: Apache-2.0
#include "somnus/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "somnus/error.hpp"
#include "somnus/hypnogram.hpp"

namespace somnus {

namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'O', 'M', 'N'};

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

Bytes write_container(const Recording& r) {
  nlohmann::json header;
  header["id"] = r.id;
  header["sample_rate_hz"] = r.sample_rate_hz();
  header["n_samples"] = r.n_samples();
  header["channels"] = nlohmann::json::array();
  for (const auto& c : r.channels) {
    header["channels"].push_back({{"label", c.label},
                                  {"physical_min", c.physical_min},
                                  {"physical_max", c.physical_max},
                                  {"digital_min", c.digital_min},
                                  {"digital_max", c.digital_max}});
  }
  header["metadata"] = r.metadata;
  if (r.start_time) header["start_time"] = *r.start_time;
  const std::string text = header.dump();

  Bytes out;
  const std::size_t n = r.n_samples();
  out.reserve(12 + text.size() + r.channels.size() * n * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& c : r.channels) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(c.samples.data());
    out.insert(out.end(), p, p + c.samples.size() * sizeof(float));
  }
  return out;
}

Recording parse_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw ParseError(bytes.size(), "container truncated before header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(0, "bad container magic");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kContainerVersion) {
    throw VersionError("unknown container version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw ParseError(bytes.size(), "container header truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(12, std::string("container header is not valid JSON: ") + e.what());
  }

  Recording r;
  try {
    r.id = header.at("id").get<std::string>();
    const double rate = header.at("sample_rate_hz").get<double>();
    const auto n = header.at("n_samples").get<std::size_t>();
    const auto& chans = header.at("channels");
    std::size_t pos = 12 + header_len;
    const std::size_t need = pos + chans.size() * n * sizeof(float);
    if (bytes.size() != need) {
      throw ParseError(std::min(bytes.size(), need),
                       "container sample payload is " + std::to_string(bytes.size() - pos) +
                           " bytes, expected " + std::to_string(need - pos));
    }
    for (const auto& cj : chans) {
      ChannelSignal c;
      c.label = cj.at("label").get<std::string>();
      c.sample_rate_hz = rate;
      c.physical_min = cj.at("physical_min").get<double>();
      c.physical_max = cj.at("physical_max").get<double>();
      c.digital_min = cj.at("digital_min").get<std::int32_t>();
      c.digital_max = cj.at("digital_max").get<std::int32_t>();
      c.samples.resize(n);
      std::memcpy(c.samples.data(), bytes.data() + pos, n * sizeof(float));
      pos += n * sizeof(float);
      r.channels.push_back(std::move(c));
    }
    if (header.contains("metadata")) {
      r.metadata = header["metadata"].get<std::map<std::string, std::string>>();
    }
    if (header.contains("start_time")) r.start_time = header["start_time"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(12, std::string("container header missing fields: ") + e.what());
  }
  return r;
}

Recording load_recording_bytes(std::span<const std::uint8_t> bytes, std::string id) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0) {
    Recording r = parse_container(bytes);
    if (!id.empty()) r.id = std::move(id);
    return r;
  }
  return parse_edf(bytes, std::move(id));
}

Recording load_recording(const std::string& path, const std::string& sidecar_path) {
  const Bytes bytes = read_file(path);
  Recording r;
  try {
    r = load_recording_bytes(bytes, std::filesystem::path(path).stem().string());
  } catch (const ParseError& e) {
    throw ParseError(e.offset(), path + ": " + e.detail());
  }
  if (!sidecar_path.empty()) r.expert_hypnogram = read_sidecar(sidecar_path);
  return r;
}

}  // namespace somnus
