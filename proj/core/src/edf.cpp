// SPDX-License-Identifier: Apache-2.0
#include "somnus/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string_view>

#include "somnus/error.hpp"

namespace somnus {

namespace {

constexpr std::size_t kFixedHeaderBytes = 256;
constexpr std::size_t kSignalHeaderBytes = 256;
constexpr std::string_view kVersion = "0       ";

// Field widths of the per-signal header, in file order.
constexpr std::size_t kLabelW = 16, kTransducerW = 80, kDimW = 8, kPhysMinW = 8,
                      kPhysMaxW = 8, kDigMinW = 8, kDigMaxW = 8, kPrefilterW = 80,
                      kSprW = 8, kSigReservedW = 32;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string_view field(std::size_t offset, std::size_t width) const {
    return {reinterpret_cast<const char*>(bytes_.data()) + offset, width};
  }

  double number(std::size_t offset, std::size_t width, std::string_view what) const {
    std::string_view s = trim(field(offset, width));
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ParseError(offset, "invalid numeric field " + std::string(what) + " '" +
                                   std::string(s) + "'");
    }
    return v;
  }

  std::int64_t integer(std::size_t offset, std::size_t width, std::string_view what) const {
    std::string_view s = trim(field(offset, width));
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(offset, "invalid integer field " + std::string(what) + " '" +
                                   std::string(s) + "'");
    }
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
};

void put_field(Bytes& out, std::string_view value, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) {
    out.push_back(i < value.size() ? static_cast<std::uint8_t>(value[i]) : ' ');
  }
}

// Shortest %g rendering that fits in an 8-character EDF field.
std::string format_number(double v, std::size_t width = 8) {
  if (v == std::floor(v) && std::fabs(v) < 1e7) {
    std::string s = std::to_string(static_cast<long long>(v));
    if (s.size() <= width) return s;
  }
  for (int prec = 8; prec >= 1; --prec) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    std::string s(buf);
    if (s.size() <= width) return s;
  }
  throw RangeError("value " + std::to_string(v) + " does not fit an EDF header field");
}

// Reuse the raw text when it still encodes the same value.
std::string numeric_field(const std::string& raw, double value) {
  if (!raw.empty()) {
    std::string_view s = trim(raw);
    double parsed = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), parsed);
    if (ec == std::errc() && ptr == s.data() + s.size() && parsed == value) return raw;
  }
  return format_number(value);
}

}  // namespace

Recording parse_edf(std::span<const std::uint8_t> bytes, std::string id) {
  if (bytes.size() < kFixedHeaderBytes) {
    throw ParseError(bytes.size(), "malformed header length: file shorter than the " +
                                       std::to_string(kFixedHeaderBytes) +
                                       "-byte fixed header");
  }
  HeaderReader h(bytes);
  if (h.field(0, 8) != kVersion) {
    throw ParseError(0, "unsupported version '" + std::string(h.field(0, 8)) + "'");
  }

  Recording r;
  r.id = std::move(id);
  EdfHeaderExtras extras;
  extras.patient = std::string(h.field(8, 80));
  extras.recording = std::string(h.field(88, 80));
  extras.start_date = std::string(h.field(168, 8));
  extras.start_time = std::string(h.field(176, 8));
  extras.header_bytes_field = std::string(h.field(184, 8));
  extras.reserved = std::string(h.field(192, 44));
  extras.num_records_field = std::string(h.field(236, 8));
  extras.record_duration_field = std::string(h.field(244, 8));
  extras.num_signals_field = std::string(h.field(252, 4));

  const std::int64_t header_bytes = h.integer(184, 8, "header bytes");
  const std::int64_t num_records = h.integer(236, 8, "number of records");
  extras.record_duration_s = h.number(244, 8, "record duration");
  const std::int64_t ns = h.integer(252, 4, "number of signals");
  if (ns < 0) throw ParseError(252, "negative number of signals");
  const auto n_sig = static_cast<std::size_t>(ns);
  if (header_bytes != static_cast<std::int64_t>(kFixedHeaderBytes + n_sig * kSignalHeaderBytes)) {
    throw ParseError(184, "malformed header length: header declares " +
                              std::to_string(header_bytes) + " bytes but " +
                              std::to_string(ns) + " signals need " +
                              std::to_string(kFixedHeaderBytes + n_sig * kSignalHeaderBytes));
  }
  if (bytes.size() < static_cast<std::size_t>(header_bytes)) {
    throw ParseError(bytes.size(), "malformed header length: signal headers truncated");
  }
  if (!(extras.record_duration_s > 0.0) && n_sig > 0) {
    throw ParseError(244, "record duration must be positive");
  }
  r.start_time = std::string(trim(extras.start_date)) + " " + std::string(trim(extras.start_time));

  // Signal header fields are stored field-major: all labels, then all
  // transducers, and so on.
  std::size_t base = kFixedHeaderBytes;
  auto field_offset = [&](std::size_t field_start, std::size_t width, std::size_t i) {
    return base + field_start * n_sig + i * width;
  };
  const std::size_t o_label = 0;
  const std::size_t o_trans = o_label + kLabelW;
  const std::size_t o_dim = o_trans + kTransducerW;
  const std::size_t o_pmin = o_dim + kDimW;
  const std::size_t o_pmax = o_pmin + kPhysMinW;
  const std::size_t o_dmin = o_pmax + kPhysMaxW;
  const std::size_t o_dmax = o_dmin + kDigMinW;
  const std::size_t o_pre = o_dmax + kDigMaxW;
  const std::size_t o_spr = o_pre + kPrefilterW;
  const std::size_t o_res = o_spr + kSprW;

  std::size_t record_bytes = 0;
  r.channels.resize(n_sig);
  for (std::size_t i = 0; i < n_sig; ++i) {
    ChannelSignal& c = r.channels[i];
    EdfSignalExtras se;
    c.label = std::string(trim(h.field(field_offset(o_label, kLabelW, i), kLabelW)));
    se.transducer = std::string(h.field(field_offset(o_trans, kTransducerW, i), kTransducerW));
    se.physical_dim = std::string(h.field(field_offset(o_dim, kDimW, i), kDimW));
    se.prefilter = std::string(h.field(field_offset(o_pre, kPrefilterW, i), kPrefilterW));
    se.reserved = std::string(h.field(field_offset(o_res, kSigReservedW, i), kSigReservedW));
    se.physical_min_field = std::string(h.field(field_offset(o_pmin, kPhysMinW, i), kPhysMinW));
    se.physical_max_field = std::string(h.field(field_offset(o_pmax, kPhysMaxW, i), kPhysMaxW));
    se.digital_min_field = std::string(h.field(field_offset(o_dmin, kDigMinW, i), kDigMinW));
    se.digital_max_field = std::string(h.field(field_offset(o_dmax, kDigMaxW, i), kDigMaxW));
    se.samples_per_record_field = std::string(h.field(field_offset(o_spr, kSprW, i), kSprW));

    c.physical_min = h.number(field_offset(o_pmin, kPhysMinW, i), kPhysMinW, "physical minimum");
    c.physical_max = h.number(field_offset(o_pmax, kPhysMaxW, i), kPhysMaxW, "physical maximum");
    const std::int64_t dmin = h.integer(field_offset(o_dmin, kDigMinW, i), kDigMinW, "digital minimum");
    const std::int64_t dmax = h.integer(field_offset(o_dmax, kDigMaxW, i), kDigMaxW, "digital maximum");
    if (dmin == dmax) {
      throw ParseError(field_offset(o_dmin, kDigMinW, i),
                       "digital minimum equals digital maximum for signal '" + c.label + "'");
    }
    if (dmin > dmax || dmin < -32768 || dmax > 32767) {
      throw ParseError(field_offset(o_dmin, kDigMinW, i),
                       "invalid digital range for signal '" + c.label + "'");
    }
    if (c.physical_min == c.physical_max) {
      throw ParseError(field_offset(o_pmin, kPhysMinW, i),
                       "physical minimum equals physical maximum for signal '" + c.label + "'");
    }
    c.digital_min = static_cast<std::int32_t>(dmin);
    c.digital_max = static_cast<std::int32_t>(dmax);
    se.samples_per_record = h.integer(field_offset(o_spr, kSprW, i), kSprW, "samples per record");
    if (se.samples_per_record <= 0) {
      throw ParseError(field_offset(o_spr, kSprW, i), "samples per record must be positive");
    }
    c.sample_rate_hz = static_cast<double>(se.samples_per_record) / extras.record_duration_s;
    record_bytes += static_cast<std::size_t>(se.samples_per_record) * 2;
    c.edf = std::move(se);
  }

  const std::size_t data_bytes = bytes.size() - static_cast<std::size_t>(header_bytes);
  std::size_t n_records = 0;
  if (num_records == -1) {
    if (record_bytes == 0 || data_bytes % record_bytes != 0) {
      throw ParseError(bytes.size(), "inconsistent record sizes: " + std::to_string(data_bytes) +
                                         " data bytes are not a whole number of " +
                                         std::to_string(record_bytes) + "-byte records");
    }
    n_records = data_bytes / record_bytes;
  } else if (num_records < 0) {
    throw ParseError(236, "negative number of records");
  } else {
    n_records = static_cast<std::size_t>(num_records);
    const std::size_t expected = n_records * record_bytes;
    if (data_bytes != expected) {
      const std::size_t offset = data_bytes < expected
                                     ? bytes.size()
                                     : static_cast<std::size_t>(header_bytes) + expected;
      throw ParseError(offset, "inconsistent record sizes: header declares " +
                                   std::to_string(n_records) + " records of " +
                                   std::to_string(record_bytes) + " bytes, data section has " +
                                   std::to_string(data_bytes) + " bytes");
    }
  }

  for (auto& c : r.channels) c.samples.resize(n_records * static_cast<std::size_t>(c.edf->samples_per_record));
  std::size_t pos = static_cast<std::size_t>(header_bytes);
  for (std::size_t rec = 0; rec < n_records; ++rec) {
    for (auto& c : r.channels) {
      const auto spr = static_cast<std::size_t>(c.edf->samples_per_record);
      const double scale = (c.physical_max - c.physical_min) /
                           static_cast<double>(c.digital_max - c.digital_min);
      float* dst = c.samples.data() + rec * spr;
      for (std::size_t k = 0; k < spr; ++k) {
        const auto d = static_cast<std::int16_t>(
            static_cast<std::uint16_t>(bytes[pos]) | (static_cast<std::uint16_t>(bytes[pos + 1]) << 8));
        pos += 2;
        dst[k] = static_cast<float>((static_cast<double>(d) - c.digital_min) * scale + c.physical_min);
      }
    }
  }
  r.edf = std::move(extras);
  return r;
}

Bytes write_edf(const Recording& r) {
  const std::size_t ns = r.channels.size();
  EdfHeaderExtras hx = r.edf.value_or(EdfHeaderExtras{});
  if (!r.edf) {
    hx.patient = "X X X X";
    hx.recording = "Startdate X X X somnus " + r.id;
    hx.start_date = "01.01.00";
    hx.start_time = "00.00.00";
    hx.record_duration_s = 1.0;
  }

  std::vector<std::size_t> spr(ns);
  std::size_t n_records = 0;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& c = r.channels[i];
    c.validate_ranges();
    if (c.edf) {
      spr[i] = static_cast<std::size_t>(c.edf->samples_per_record);
    } else {
      const double per = c.sample_rate_hz * hx.record_duration_s;
      if (per != std::floor(per) || per < 1.0) {
        throw ShapeError("channel " + c.label + ": sample rate does not give whole samples per record");
      }
      spr[i] = static_cast<std::size_t>(per);
    }
    if (c.samples.size() % spr[i] != 0) {
      throw ShapeError("channel " + c.label + ": " + std::to_string(c.samples.size()) +
                       " samples do not fill whole data records of " + std::to_string(spr[i]));
    }
    const std::size_t recs = c.samples.size() / spr[i];
    if (i == 0) {
      n_records = recs;
    } else if (recs != n_records) {
      throw ShapeError("channel " + c.label + " spans a different number of data records");
    }
  }

  Bytes out;
  out.reserve(kFixedHeaderBytes * (ns + 1) + n_records * 2 * [&] {
    std::size_t s = 0;
    for (auto v : spr) s += v;
    return s;
  }());
  const std::size_t header_bytes = kFixedHeaderBytes + ns * kSignalHeaderBytes;
  put_field(out, kVersion, 8);
  put_field(out, hx.patient, 80);
  put_field(out, hx.recording, 80);
  put_field(out, hx.start_date, 8);
  put_field(out, hx.start_time, 8);
  put_field(out, numeric_field(hx.header_bytes_field, static_cast<double>(header_bytes)), 8);
  put_field(out, hx.reserved, 44);
  put_field(out, numeric_field(hx.num_records_field, static_cast<double>(n_records)), 8);
  put_field(out, numeric_field(hx.record_duration_field, hx.record_duration_s), 8);
  {
    std::string f = hx.num_signals_field;
    if (trim(f) != std::to_string(ns)) f = std::to_string(ns);
    put_field(out, f, 4);
  }

  auto each = [&](auto&& fn, std::size_t width) {
    for (std::size_t i = 0; i < ns; ++i) put_field(out, fn(r.channels[i], i), width);
  };
  const EdfSignalExtras blank{};
  auto ex = [&](const ChannelSignal& c) -> const EdfSignalExtras& { return c.edf ? *c.edf : blank; };
  each([](const ChannelSignal& c, std::size_t) { return c.label; }, kLabelW);
  each([&](const ChannelSignal& c, std::size_t) { return ex(c).transducer; }, kTransducerW);
  each([&](const ChannelSignal& c, std::size_t) { return c.edf ? c.edf->physical_dim : std::string("uV"); }, kDimW);
  each([&](const ChannelSignal& c, std::size_t) { return numeric_field(ex(c).physical_min_field, c.physical_min); }, kPhysMinW);
  each([&](const ChannelSignal& c, std::size_t) { return numeric_field(ex(c).physical_max_field, c.physical_max); }, kPhysMaxW);
  each([&](const ChannelSignal& c, std::size_t) { return numeric_field(ex(c).digital_min_field, c.digital_min); }, kDigMinW);
  each([&](const ChannelSignal& c, std::size_t) { return numeric_field(ex(c).digital_max_field, c.digital_max); }, kDigMaxW);
  each([&](const ChannelSignal& c, std::size_t) { return ex(c).prefilter; }, kPrefilterW);
  each([&](const ChannelSignal& c, std::size_t i) {
    return numeric_field(ex(c).samples_per_record_field, static_cast<double>(spr[i]));
  }, kSprW);
  each([&](const ChannelSignal& c, std::size_t) { return ex(c).reserved; }, kSigReservedW);

  for (std::size_t rec = 0; rec < n_records; ++rec) {
    for (std::size_t i = 0; i < ns; ++i) {
      const auto& c = r.channels[i];
      const double span = c.physical_max - c.physical_min;
      const double dspan = static_cast<double>(c.digital_max - c.digital_min);
      const double lsb = std::fabs(span / dspan);
      const double lo = std::min(c.physical_min, c.physical_max) - 0.5 * lsb;
      const double hi = std::max(c.physical_min, c.physical_max) + 0.5 * lsb;
      for (std::size_t k = 0; k < spr[i]; ++k) {
        const std::size_t t = rec * spr[i] + k;
        const double p = c.samples[t];
        if (!(p >= lo && p <= hi)) {
          throw RangeError("channel " + c.label + " sample " + std::to_string(t) + " = " +
                           std::to_string(p) + " lies outside the physical range [" +
                           std::to_string(c.physical_min) + ", " + std::to_string(c.physical_max) + "]");
        }
        double d = std::round((p - c.physical_min) * dspan / span + c.digital_min);
        d = std::clamp(d, static_cast<double>(c.digital_min), static_cast<double>(c.digital_max));
        const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(d));
        out.push_back(static_cast<std::uint8_t>(u & 0xFF));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
      }
    }
  }
  return out;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace somnus
