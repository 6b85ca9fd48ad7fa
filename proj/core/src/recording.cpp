// SPDX-License-Identifier: Apache-2.0
#include "somnus/recording.hpp"

#include <cmath>

#include "somnus/error.hpp"

namespace somnus {

void ChannelSignal::validate_ranges() const {
  if (digital_min >= digital_max) {
    throw ValidationError("channel " + label + ": digital min must be below digital max");
  }
  if (physical_min == physical_max) {
    throw ValidationError("channel " + label + ": physical min equals physical max");
  }
}

double Recording::sample_rate_hz() const {
  if (channels.empty()) return kCanonicalRateHz;
  const double rate = channels.front().sample_rate_hz;
  for (const auto& c : channels) {
    if (c.sample_rate_hz != rate) {
      throw ValidationError("recording " + id + ": channel " + c.label +
                            " has a different sample rate");
    }
  }
  return rate;
}

std::size_t Recording::n_samples() const {
  if (channels.empty()) return 0;
  const std::size_t n = channels.front().samples.size();
  for (const auto& c : channels) {
    if (c.samples.size() != n) {
      throw ValidationError("recording " + id + ": channel " + c.label +
                            " has a different length");
    }
  }
  return n;
}

const ChannelSignal* Recording::find_channel(std::string_view label) const {
  for (const auto& c : channels) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

const ChannelSignal& Recording::channel(std::string_view label) const {
  if (const auto* c = find_channel(label)) return *c;
  throw MontageError("recording " + id + " has no channel " + std::string(label));
}

void Recording::validate() const {
  const std::size_t n = n_samples();
  const double rate = sample_rate_hz();
  if (!(rate > 0.0)) throw ValidationError("sample rate must be positive");
  if (expert_hypnogram) {
    const std::size_t epochs = epoch_count(n, rate);
    if (expert_hypnogram->size() != epochs) {
      throw ValidationError("expert hypnogram has " +
                            std::to_string(expert_hypnogram->size()) +
                            " epochs, recording has " + std::to_string(epochs));
    }
  }
}

std::size_t epoch_count(std::size_t n_samples, double sample_rate_hz) {
  const auto per_epoch =
      static_cast<std::size_t>(std::llround(sample_rate_hz * kEpochSeconds));
  if (per_epoch == 0) return 0;
  return n_samples / per_epoch;
}

std::size_t epoch_count(const Recording& r) {
  return epoch_count(r.n_samples(), r.sample_rate_hz());
}

const Montage& Montage::standard() {
  static const Montage m{
      {{{"F3-M2", "F3", "M2"},
        {"F4-M1", "F4", "M1"},
        {"C3-M2", "C3", "M2"},
        {"C4-M1", "C4", "M1"},
        {"O1-M2", "O1", "M2"},
        {"O2-M1", "O2", "M1"}}},
      {{{"frontal", 0, 1}, {"central", 2, 3}, {"occipital", 4, 5}}}};
  return m;
}

std::array<std::string_view, kNumDerivedChannels> Montage::names() const {
  std::array<std::string_view, kNumDerivedChannels> out{};
  for (std::size_t i = 0; i < kNumDerivedChannels; ++i) out[i] = derivations[i].name;
  return out;
}

std::vector<float> resample_linear(std::span<const float> x, double source_hz,
                                   double target_hz) {
  if (!(source_hz > 0.0) || !(target_hz > 0.0)) {
    throw ParameterError("sample rates must be positive");
  }
  if (source_hz == target_hz) return {x.begin(), x.end()};
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(x.size()) * target_hz / source_hz));
  std::vector<float> out(n_out);
  const double step = source_hz / target_hz;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= x.size()) {
      out[i] = x.back();
    } else {
      out[i] = static_cast<float>((1.0 - frac) * x[lo] + frac * x[lo + 1]);
    }
  }
  return out;
}

namespace {

ChannelSignal to_canonical_rate(const ChannelSignal& c) {
  ChannelSignal out = c;
  out.edf.reset();
  if (c.sample_rate_hz != kCanonicalRateHz) {
    out.samples = resample_linear(c.samples, c.sample_rate_hz, kCanonicalRateHz);
    out.sample_rate_hz = kCanonicalRateHz;
  }
  return out;
}

}  // namespace

Recording derive_montage(const Recording& raw, const Montage& m) {
  Recording out;
  out.id = raw.id;
  out.expert_hypnogram = raw.expert_hypnogram;
  out.start_time = raw.start_time;

  bool already_derived = true;
  for (const auto& d : m.derivations) {
    if (!raw.find_channel(d.name)) {
      already_derived = false;
      break;
    }
  }
  if (already_derived) {
    const bool passthrough = raw.channels.size() == kNumDerivedChannels &&
                             [&] {
                               for (std::size_t i = 0; i < kNumDerivedChannels; ++i) {
                                 if (raw.channels[i].label != m.derivations[i].name ||
                                     raw.channels[i].sample_rate_hz != kCanonicalRateHz)
                                   return false;
                               }
                               return true;
                             }();
    if (passthrough) return raw;
    for (const auto& d : m.derivations) {
      out.channels.push_back(to_canonical_rate(raw.channel(d.name)));
    }
    out.n_samples();
    return out;
  }

  for (std::string_view e : {"F3", "F4", "C3", "C4", "O1", "O2", "M1", "M2"}) {
    if (!raw.find_channel(e)) {
      throw MontageError("missing electrode " + std::string(e));
    }
  }
  for (const auto& d : m.derivations) {
    const ChannelSignal el = to_canonical_rate(raw.channel(d.electrode));
    const ChannelSignal ref = to_canonical_rate(raw.channel(d.reference));
    if (el.samples.size() != ref.samples.size()) {
      throw MontageError("electrodes " + std::string(d.electrode) + " and " +
                         std::string(d.reference) + " differ in length");
    }
    ChannelSignal c;
    c.label = std::string(d.name);
    c.sample_rate_hz = kCanonicalRateHz;
    c.physical_min = el.physical_min - ref.physical_max;
    c.physical_max = el.physical_max - ref.physical_min;
    c.samples.resize(el.samples.size());
    for (std::size_t t = 0; t < c.samples.size(); ++t) {
      c.samples[t] = static_cast<float>(static_cast<double>(el.samples[t]) -
                                        static_cast<double>(ref.samples[t]));
    }
    out.channels.push_back(std::move(c));
  }
  out.n_samples();
  return out;
}

std::span<const float> epoch_view(const ChannelSignal& c, std::size_t epoch) {
  const std::size_t begin = epoch * kEpochSamples;
  if (begin + kEpochSamples > c.samples.size()) {
    throw ShapeError("epoch " + std::to_string(epoch) + " is not complete in channel " +
                     c.label);
  }
  return std::span<const float>(c.samples).subspan(begin, kEpochSamples);
}

}  // namespace somnus
