// SPDX-License-Identifier: Apache-2.0
#include "somnus/store.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "somnus/edf.hpp"
#include "somnus/error.hpp"

namespace somnus::store {

static_assert(std::endian::native == std::endian::little, "model store assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'O', 'M', 'D'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint32_t crc(std::span<const std::uint8_t> b) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths.
  std::size_t off = 0;
  while (off < b.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
    c = crc32(c, b.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

nlohmann::json history_json(const train::History& h) {
  return {{"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"best_eval", h.best_eval},
          {"steps", h.steps},           {"early_stopped", h.early_stopped}};
}

}  // namespace

std::vector<std::uint8_t> save_model(const train::TrainedModel& m) {
  nlohmann::json meta;
  meta["name"] = m.name;
  meta["spec"] = detail::spec_to_json(m.spec);
  meta["config"] = detail::config_to_json(m.config);
  meta["optimizer"] = m.optimizer;
  meta["spectral"] = {{"window", m.spectral.window},       {"hop", m.spectral.hop},
                      {"fft_length", m.spectral.fft_length}, {"nw", m.spectral.nw},
                      {"tapers", m.spectral.tapers},       {"sample_rate_hz", m.spectral.sample_rate_hz}};
  meta["validation"] = {{"loss", m.val_loss}, {"accuracy", m.val_accuracy}, {"kappa", m.val_kappa}};
  meta["history"] = history_json(m.history);
  meta["train_ids"] = m.train_ids;
  meta["val_ids"] = m.val_ids;
  nlohmann::json blobs = nlohmann::json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    blobs.push_back({{"name", m.params.names[i]}, {"shape", m.params[i].shape}});
  }
  blobs.push_back({{"name", "norm.mean"}, {"shape", {m.norm.mean.size()}}});
  blobs.push_back({{"name", "norm.stdev"}, {"shape", {m.norm.stdev.size()}}});
  meta["blobs"] = blobs;
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, m.format_version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  auto put_doubles = [&](const std::vector<double>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(double));
  };
  for (const auto& t : m.params.tensors) put_doubles(t.data);
  put_doubles(m.norm.mean);
  put_doubles(m.norm.stdev);
  put_u32(out, crc(out));
  return out;
}

train::TrainedModel load_model(std::span<const std::uint8_t> b) {
  if (b.size() < 16) throw ParseError(b.size(), "model file truncated");
  if (std::memcmp(b.data(), kMagic, 4) != 0) throw ParseError(0, "not a somnus model file");
  const std::uint32_t version = get_u32(b, 4);
  if (version != train::kModelFormatVersion) {
    throw VersionError("unknown model format version " + std::to_string(version));
  }
  const std::uint32_t stored = get_u32(b, b.size() - 4);
  if (crc(b.first(b.size() - 4)) != stored) throw ChecksumError("model checksum mismatch");
  const std::uint32_t meta_len = get_u32(b, 8);
  if (12 + static_cast<std::size_t>(meta_len) + 4 > b.size()) throw ParseError(8, "metadata length exceeds the file");

  train::TrainedModel m;
  m.format_version = version;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(b.begin() + 12, b.begin() + 12 + meta_len);
    m.name = meta.at("name").get<std::string>();
    m.spec = detail::spec_from_json(meta.at("spec"));
    m.config = detail::config_from_json(meta.at("config"));
    m.optimizer = meta.at("optimizer").get<std::string>();
    const auto& sp = meta.at("spectral");
    m.spectral.window = sp.at("window").get<std::size_t>();
    m.spectral.hop = sp.at("hop").get<std::size_t>();
    m.spectral.fft_length = sp.at("fft_length").get<std::size_t>();
    m.spectral.nw = sp.at("nw").get<double>();
    m.spectral.tapers = sp.at("tapers").get<std::size_t>();
    m.spectral.sample_rate_hz = sp.at("sample_rate_hz").get<double>();
    const auto& v = meta.at("validation");
    m.val_loss = v.at("loss").get<double>();
    m.val_accuracy = v.at("accuracy").get<double>();
    m.val_kappa = v.at("kappa").get<double>();
    const auto& h = meta.at("history");
    m.history.train_loss = h.at("train_loss").get<std::vector<double>>();
    m.history.val_loss = h.at("val_loss").get<std::vector<double>>();
    m.history.best_eval = h.at("best_eval").get<std::size_t>();
    m.history.steps = h.at("steps").get<std::size_t>();
    m.history.early_stopped = h.at("early_stopped").get<bool>();
    m.train_ids = meta.at("train_ids").get<std::vector<std::string>>();
    m.val_ids = meta.at("val_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model metadata: ") + e.what());
  }
  if (m.spectral != train::SpectralProvenance{}) {
    throw DataError("model was trained on spectral parameters this build does not compute");
  }

  const nn::Network net(m.spec);
  m.params = net.layout();
  const auto& blobs = meta.at("blobs");
  if (blobs.size() != m.params.size() + 2) throw DataError("model metadata: blob count does not match the architecture");
  std::size_t off = 12 + meta_len;
  auto take = [&](std::vector<double>& dst, std::size_t n, const std::string& name) {
    const std::size_t bytes = n * sizeof(double);
    if (off + bytes > b.size() - 4) throw ParseError(off, "weight blob " + name + " truncated");
    dst.resize(n);
    std::memcpy(dst.data(), b.data() + off, bytes);
    off += bytes;
  };
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto name = blobs[i].at("name").get<std::string>();
    const auto shape = blobs[i].at("shape").get<std::vector<std::size_t>>();
    if (name != m.params.names[i] || shape != m.params[i].shape) {
      throw DataError("model metadata: blob " + name + " does not match layer " + m.params.names[i]);
    }
    take(m.params[i].data, m.params[i].size(), name);
  }
  take(m.norm.mean, blobs[m.params.size()].at("shape")[0].get<std::size_t>(), "norm.mean");
  take(m.norm.stdev, blobs[m.params.size() + 1].at("shape")[0].get<std::size_t>(), "norm.stdev");
  if (m.norm.mean.size() != m.spec.input.size()) throw DataError("model metadata: normalization width mismatch");
  if (off != b.size() - 4) throw ParseError(off, "trailing bytes after weight blobs");
  return m;
}

void save_model_file(const std::filesystem::path& p, const train::TrainedModel& m) {
  write_file(p.string(), save_model(m));
}

train::TrainedModel load_model_file(const std::filesystem::path& p) { return load_model(read_file(p.string())); }

ModelStore::ModelStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::vector<std::string> ModelStore::list() const {
  std::vector<std::string> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir_, ec)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir_)) {
    if (e.is_regular_file() && e.path().extension() == ".somd") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::filesystem::path ModelStore::path_of(const std::string& name) const { return dir_ / (name + ".somd"); }

bool ModelStore::contains(const std::string& name) const {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos) return false;
  return std::filesystem::is_regular_file(path_of(name));
}

train::TrainedModel ModelStore::load(const std::string& name) const {
  if (!contains(name)) throw IoError("model '" + name + "' not found in " + dir_.string());
  return load_model_file(path_of(name));
}

void ModelStore::save(const std::string& name, const train::TrainedModel& m) const {
  std::filesystem::create_directories(dir_);
  save_model_file(path_of(name), m);
}

}  // namespace somnus::store
