// SPDX-License-Identifier: Apache-2.0
#include "somnus/service.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <list>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <thread>

#include "somnus/container.hpp"
#include "somnus/edf.hpp"
#include "somnus/error.hpp"
#include "somnus/parallel.hpp"
#include "somnus/score.hpp"
#include "somnus/spectral.hpp"
#include "somnus/store.hpp"
#include "somnus_api_schema.hpp"

// After the Eigen-based headers: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace somnus::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr const char* kJsonType = "application/json";
constexpr const char* kInterrupted = "scoring interrupted before completion";

static_assert(std::endian::native == std::endian::little, "waveform encoding assumes a little-endian host");

// Thrown from the chunk callback when the service is stopping.
struct Interrupted {};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Temp file + rename so readers of the directory never see a torn document.
void write_atomic(const fs::path& p, std::string_view text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJsonType);
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}, {"status", status}});
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    if (rest == 2) v |= std::uint32_t{bytes[i + 1]} << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  auto value = [](char c) -> int {
    const char* p = std::strchr(kAlphabet, c);
    return (c != '\0' && p != nullptr) ? static_cast<int>(p - kAlphabet) : -1;
  };
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    if (pad == 1 && text[i + 2] == '=') throw DataError("base64: misplaced padding");
    std::uint32_t v = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + static_cast<std::size_t>(j)];
      int d = 0;
      if (j < 4 - pad) {
        d = value(c);
        if (d < 0) throw DataError("base64: invalid character at " + std::to_string(i + static_cast<std::size_t>(j)));
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::string_view api_schema() { return kApiSchemaJson; }

// ---------------------------------------------------------------------------

namespace {

enum class State { Pending, Running, Done, Failed };

const char* state_name(State s) {
  switch (s) {
    case State::Pending: return "pending";
    case State::Running: return "running";
    case State::Done: return "done";
    case State::Failed: return "failed";
  }
  return "pending";
}

State parse_state(const std::string& s) {
  if (s == "pending") return State::Pending;
  if (s == "running") return State::Running;
  if (s == "done") return State::Done;
  if (s == "failed") return State::Failed;
  throw DataError("unknown case state '" + s + "'");
}

struct Case {
  // Immutable after creation.
  std::string id;
  fs::path dir;
  std::string recording_id;
  std::size_t epoch_count = 0;
  bool has_expert = false;

  // Guarded by mu; written only by the scoring job once a case exists.
  mutable std::mutex mu;
  State state = State::Pending;
  std::optional<std::string> model;
  std::optional<std::string> error;
  std::size_t epochs_done = 0;
  std::vector<StageProbs> partial;
  std::optional<json> result;
};

struct CachedModel {
  fs::file_time_type mtime;
  std::shared_ptr<const train::TrainedModel> model;
};

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  store::ModelStore models;
  httplib::Server http;
  MultitaperPsd psd{canonical_tapers()};

  std::mutex cases_mu;
  std::map<std::string, std::shared_ptr<Case>> cases;
  std::uint64_t next_case = 1;

  std::mutex model_mu;
  std::map<std::string, CachedModel> model_cache;

  // Derived recordings for epoch drill-down; small LRU, newest first.
  std::mutex derived_mu;
  std::list<std::pair<std::string, std::shared_ptr<const Recording>>> derived;
  static constexpr std::size_t kDerivedCacheSize = 2;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::condition_variable idle_cv;
  std::deque<std::pair<std::shared_ptr<Case>, std::string>> queue;
  std::size_t active = 0;
  std::atomic<bool> stopping{false};
  std::vector<std::thread> workers;

  // run() and stop() may race from different threads; see shutdown().
  std::atomic<bool> run_entered{false};
  std::atomic<bool> run_exited{false};

  explicit Impl(ServiceConfig c) : cfg(std::move(c)), models(cfg.model_dir) {
    fs::create_directories(cases_dir());
    restore_cases();
    routes();
    const unsigned n = std::max(1u, cfg.workers);
    for (unsigned i = 0; i < n; ++i) workers.emplace_back([this] { worker_loop(); });
  }

  ~Impl() { shutdown(); }

  fs::path cases_dir() const { return cfg.data_dir / "cases"; }

  void shutdown() {
    stopping = true;
    // httplib's stop() is a no-op until the accept loop is up; wait for it if
    // run() has begun. A run() that starts later sees `stopping` and returns.
    if (run_entered) {
      while (!http.is_running() && !run_exited) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    http.stop();
    jobs_cv.notify_all();
    for (auto& w : workers) {
      if (w.joinable()) w.join();
    }
    workers.clear();
  }

  // --- persistence -------------------------------------------------------

  static json state_json(const Case& c) {
    return json{{"case_id", c.id},
                {"recording_id", c.recording_id},
                {"epoch_count", c.epoch_count},
                {"has_expert", c.has_expert},
                {"state", state_name(c.state)},
                {"model", optional_string(c.model)},
                {"error", optional_string(c.error)}};
  }

  // Caller holds c.mu.
  static void persist(const Case& c) {
    if (c.result) write_atomic(c.dir / "result.json", c.result->dump());
    write_atomic(c.dir / "state.json", state_json(c).dump());
  }

  void restore_cases() {
    for (const auto& entry : fs::directory_iterator(cases_dir())) {
      const fs::path state_file = entry.path() / "state.json";
      if (!entry.is_directory() || !fs::exists(state_file)) continue;
      const json s = json::parse(read_text(state_file));
      auto c = std::make_shared<Case>();
      c->id = s.at("case_id").get<std::string>();
      c->dir = entry.path();
      c->recording_id = s.at("recording_id").get<std::string>();
      c->epoch_count = s.at("epoch_count").get<std::size_t>();
      c->has_expert = s.at("has_expert").get<bool>();
      c->state = parse_state(s.at("state").get<std::string>());
      if (!s.at("model").is_null()) c->model = s.at("model").get<std::string>();
      if (!s.at("error").is_null()) c->error = s.at("error").get<std::string>();
      if (c->state == State::Done) {
        c->result = json::parse(read_text(c->dir / "result.json"));
        c->epochs_done = c->epoch_count;
      }
      if (c->state == State::Running) {
        c->state = State::Pending;
        c->error = kInterrupted;
        persist(*c);
      }
      // Ids are "case-<n>"; keep the counter past every restored case.
      if (c->id.rfind("case-", 0) == 0) {
        next_case = std::max<std::uint64_t>(next_case, std::stoull(c->id.substr(5)) + 1);
      }
      cases.emplace(c->id, std::move(c));
    }
  }

  std::shared_ptr<Case> find_case(const std::string& id) {
    std::lock_guard lock(cases_mu);
    auto it = cases.find(id);
    return it == cases.end() ? nullptr : it->second;
  }

  // Uploaded bytes plus sidecar, as the CLI would load them from files.
  Recording case_recording(const Case& c) const {
    const Bytes bytes = read_file((c.dir / "recording.bin").string());
    Recording r = load_recording_bytes(bytes, c.recording_id);
    if (c.has_expert) r.expert_hypnogram = read_sidecar((c.dir / "sidecar.hyp").string());
    return r;
  }

  std::shared_ptr<const Recording> derived_recording(const Case& c) {
    {
      std::lock_guard lock(derived_mu);
      for (auto it = derived.begin(); it != derived.end(); ++it) {
        if (it->first == c.id) {
          derived.splice(derived.begin(), derived, it);
          return derived.front().second;
        }
      }
    }
    auto r = std::make_shared<const Recording>(derive_montage(case_recording(c)));
    std::lock_guard lock(derived_mu);
    derived.emplace_front(c.id, r);
    if (derived.size() > kDerivedCacheSize) derived.pop_back();
    return r;
  }

  std::shared_ptr<const train::TrainedModel> load_model(const std::string& name) {
    if (!models.contains(name)) return nullptr;
    const fs::path p = models.path_of(name);
    const auto mtime = fs::last_write_time(p);
    std::lock_guard lock(model_mu);
    auto it = model_cache.find(name);
    if (it != model_cache.end() && it->second.mtime == mtime) return it->second.model;
    auto m = std::make_shared<const train::TrainedModel>(models.load(name));
    model_cache[name] = CachedModel{mtime, m};
    return m;
  }

  // --- scoring jobs ------------------------------------------------------

  void worker_loop() {
    while (true) {
      std::pair<std::shared_ptr<Case>, std::string> job;
      {
        std::unique_lock lock(jobs_mu);
        jobs_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        job = std::move(queue.front());
        queue.pop_front();
        ++active;
      }
      run_job(*job.first, job.second);
      {
        std::lock_guard lock(jobs_mu);
        --active;
      }
      idle_cv.notify_all();
    }
  }

  void run_job(Case& c, const std::string& model_name) {
    std::optional<std::string> failure;
    std::optional<json> doc;
    try {
      const auto model = load_model(model_name);
      if (!model) throw IoError("model '" + model_name + "' is no longer in the store");
      score::ScoreOptions opt;
      opt.threads = default_threads();
      const score::ScoreResult r =
          score::score_recording(*model, case_recording(c), opt, [&](std::size_t first, std::span<const StageProbs> p) {
            if (stopping) throw Interrupted{};
            std::lock_guard lock(c.mu);
            c.partial.insert(c.partial.end(), p.begin(), p.end());
            c.epochs_done = first + p.size();
          });
      doc = json::parse(score::score_document(r));
    } catch (const Interrupted&) {
      std::lock_guard lock(c.mu);
      c.state = State::Pending;
      c.error = kInterrupted;
      c.epochs_done = 0;
      c.partial.clear();
      persist(c);
      return;
    } catch (const std::exception& e) {
      failure = e.what();
    }
    std::lock_guard lock(c.mu);
    c.partial.clear();
    if (doc) {
      c.state = State::Done;
      c.error.reset();
      c.result = std::move(doc);
      c.epochs_done = c.epoch_count;
    } else {
      c.state = State::Failed;
      c.error = failure;
      c.result.reset();
      c.epochs_done = 0;
      std::error_code ec;
      fs::remove(c.dir / "result.json", ec);
    }
    persist(c);
  }

  // --- documents ---------------------------------------------------------

  static json case_record(const Case& c) {
    std::lock_guard lock(c.mu);
    json partial = nullptr;
    if (c.state == State::Running) {
      json stages = json::array();
      json conf = json::array();
      for (const auto& p : c.partial) {
        const auto best = std::max_element(p.begin(), p.end());
        stages.push_back(stage_symbol(stage_from_index(static_cast<int>(best - p.begin()))));
        conf.push_back(*best);
      }
      partial = json{{"hypnogram", std::move(stages)}, {"confidence", std::move(conf)}};
    }
    return json{{"api_version", kApiVersion},
                {"case_id", c.id},
                {"state", state_name(c.state)},
                {"recording_id", c.recording_id},
                {"epoch_count", c.epoch_count},
                {"epochs_done", c.epochs_done},
                {"has_expert", c.has_expert},
                {"model", optional_string(c.model)},
                {"error", optional_string(c.error)},
                {"partial", std::move(partial)},
                {"result", c.result ? *c.result : json(nullptr)}};
  }

  json epoch_detail(const Case& c, std::size_t t) {
    const auto rec = derived_recording(c);
    const EpochChannels ch = epoch_channels(*rec, t);

    json names = json::array();
    json data = json::array();
    const auto& montage = Montage::standard();
    for (std::size_t i = 0; i < kNumDerivedChannels; ++i) {
      names.push_back(std::string(montage.derivations[i].name));
      const auto* raw = reinterpret_cast<const std::uint8_t*>(ch[i].data());
      data.push_back(base64_encode(std::span<const std::uint8_t>(raw, ch[i].size_bytes())));
    }

    const SpectrogramGrid db = to_db(spectrogram_epoch(ch, psd).average);
    json rows = json::array();
    for (std::size_t s = 0; s < kSubEpochs; ++s) {
      const auto row = db.row(s);
      rows.push_back(json(std::vector<double>(row.begin(), row.end())));
    }
    json starts = json::array();
    for (const std::size_t off : subepoch_offsets()) starts.push_back(static_cast<double>(off) / kCanonicalRateHz);

    json stage_expert = nullptr;
    if (rec->expert_hypnogram) stage_expert = std::string(stage_symbol((*rec->expert_hypnogram)[t]));

    json stage_pred = nullptr;
    json probs = nullptr;
    json confidence = nullptr;
    {
      std::lock_guard lock(c.mu);
      if (c.result) {
        stage_pred = c.result->at("hypnogram").at(t);
        probs = c.result->at("probs").at(t);
        confidence = c.result->at("confidence").at(t);
      } else if (t < c.partial.size()) {
        const auto& p = c.partial[t];
        const auto best = std::max_element(p.begin(), p.end());
        stage_pred = std::string(stage_symbol(stage_from_index(static_cast<int>(best - p.begin()))));
        probs = json(std::vector<double>(p.begin(), p.end()));
        confidence = *best;
      }
    }

    return json{{"case_id", c.id},
                {"epoch", t},
                {"epoch_count", c.epoch_count},
                {"sample_rate_hz", kCanonicalRateHz},
                {"channels", std::move(names)},
                {"waveform",
                 {{"encoding", "base64-f32le"}, {"shape", {kNumDerivedChannels, kEpochSamples}}, {"data", std::move(data)}}},
                {"spectrogram",
                 {{"shape", {kSubEpochs, kFreqBins}},
                  {"units", "dB"},
                  {"bin_hz", kBinHz},
                  {"subepoch_start_s", std::move(starts)},
                  {"values", std::move(rows)}}},
                {"stage_expert", std::move(stage_expert)},
                {"stage_pred", std::move(stage_pred)},
                {"probs", std::move(probs)},
                {"confidence", std::move(confidence)}};
  }

  // --- handlers ----------------------------------------------------------

  void create_case(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("recording")) {
      send_error(res, 422, "expected multipart/form-data with a 'recording' part");
      return;
    }
    const auto part = req.get_file_value("recording");
    std::string stem = fs::path(part.filename).filename().stem().string();
    std::optional<std::string> sidecar;
    if (req.has_file("sidecar")) sidecar = req.get_file_value("sidecar").content;

    const auto* begin = reinterpret_cast<const std::uint8_t*>(part.content.data());
    const std::span<const std::uint8_t> bytes(begin, part.content.size());
    std::size_t epochs = 0;
    std::string recording_id;
    try {
      Recording r = load_recording_bytes(bytes, stem);
      if (sidecar) r.expert_hypnogram = parse_sidecar(*sidecar);
      const Recording d = derive_montage(r);
      epochs = epoch_count(d);
      if (epochs == 0) throw DataError("no complete epochs");
      if (r.expert_hypnogram && r.expert_hypnogram->size() != epochs) {
        throw DataError("sidecar has " + std::to_string(r.expert_hypnogram->size()) + " epochs, recording has " +
                        std::to_string(epochs));
      }
      recording_id = r.id;
    } catch (const Error& e) {
      send_error(res, 422, e.what());
      return;
    }

    auto c = std::make_shared<Case>();
    {
      std::lock_guard lock(cases_mu);
      char buf[32];
      std::snprintf(buf, sizeof buf, "case-%06llu", static_cast<unsigned long long>(next_case++));
      c->id = buf;
    }
    c->dir = cases_dir() / c->id;
    c->recording_id = recording_id.empty() ? c->id : recording_id;
    c->epoch_count = epochs;
    c->has_expert = sidecar.has_value();
    fs::create_directories(c->dir);
    write_file((c->dir / "recording.bin").string(), bytes);
    if (sidecar) write_atomic(c->dir / "sidecar.hyp", *sidecar);
    {
      std::lock_guard lock(c->mu);
      persist(*c);
    }
    {
      std::lock_guard lock(cases_mu);
      cases.emplace(c->id, c);
    }
    send_json(res, 201,
              json{{"case_id", c->id},
                   {"state", "pending"},
                   {"epoch_count", c->epoch_count},
                   {"recording_id", c->recording_id},
                   {"has_expert", c->has_expert}});
  }

  void start_scoring(const httplib::Request& req, httplib::Response& res) {
    const auto c = find_case(req.matches[1]);
    if (!c) return send_error(res, 404, "unknown case '" + std::string(req.matches[1]) + "'");
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      return send_error(res, 400, std::string("request body is not JSON: ") + e.what());
    }
    if (!body.is_object() || !body.contains("model") || !body["model"].is_string()) {
      return send_error(res, 400, "request body must be {\"model\": <name>}");
    }
    const std::string name = body["model"].get<std::string>();
    try {
      if (!load_model(name)) return send_error(res, 404, "unknown model '" + name + "'");
    } catch (const Error& e) {
      return send_error(res, 422, "model '" + name + "' cannot be loaded: " + e.what());
    }
    {
      std::lock_guard lock(c->mu);
      if (c->state == State::Running) return send_error(res, 409, "case " + c->id + " is already being scored");
      c->state = State::Running;
      c->model = name;
      c->error.reset();
      c->result.reset();
      c->epochs_done = 0;
      c->partial.clear();
      persist(*c);
    }
    {
      std::lock_guard lock(jobs_mu);
      queue.emplace_back(c, name);
    }
    jobs_cv.notify_one();
    send_json(res, 202, case_record(*c));
  }

  void routes() {
    http.set_payload_max_length(cfg.max_upload_bytes);
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      const std::string msg = res.status == 413 ? "upload exceeds the size limit" : httplib::status_message(res.status);
      send_error(res, res.status, msg);
      return httplib::Server::HandlerResponse::Handled;
    });
    http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      send_error(res, 500, msg);
    });

    http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"status", "ok"}, {"api_version", kApiVersion}});
    });
    http.Get("/api/schema.json", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(std::string(api_schema()), kJsonType);
    });
    http.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      for (const auto& name : models.list()) {
        const auto m = load_model(name);
        if (!m) continue;
        list.push_back(json{{"name", name},
                            {"family", lower(nn::family_name(m->spec.family))},
                            {"representation", std::string(nn::representation_name(m->spec.representation))},
                            {"lookback", m->spec.lookback},
                            {"val_kappa", m->val_kappa},
                            {"val_accuracy", m->val_accuracy},
                            {"format_version", m->format_version}});
      }
      send_json(res, 200, json{{"models", std::move(list)}});
    });
    http.Get("/cases", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<std::shared_ptr<Case>> all;
      {
        std::lock_guard lock(cases_mu);
        for (const auto& [id, c] : cases) all.push_back(c);
      }
      json list = json::array();
      for (const auto& c : all) {
        std::lock_guard lock(c->mu);
        list.push_back(json{{"case_id", c->id}, {"state", state_name(c->state)}, {"epoch_count", c->epoch_count}});
      }
      send_json(res, 200, json{{"cases", std::move(list)}});
    });
    http.Post("/cases", [this](const httplib::Request& req, httplib::Response& res) { create_case(req, res); });
    http.Get(R"(/cases/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto c = find_case(req.matches[1]);
      if (!c) return send_error(res, 404, "unknown case '" + std::string(req.matches[1]) + "'");
      send_json(res, 200, case_record(*c));
    });
    http.Post(R"(/cases/([A-Za-z0-9_-]+)/score)",
              [this](const httplib::Request& req, httplib::Response& res) { start_scoring(req, res); });
    http.Get(R"(/cases/([A-Za-z0-9_-]+)/epochs/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto c = find_case(req.matches[1]);
      if (!c) return send_error(res, 404, "unknown case '" + std::string(req.matches[1]) + "'");
      const std::string digits = req.matches[2];
      if (digits.size() > 18 || std::stoull(digits) >= c->epoch_count) {
        return send_error(res, 404, "epoch " + digits + " is outside [0, " + std::to_string(c->epoch_count) + ")");
      }
      send_json(res, 200, epoch_detail(*c, std::stoull(digits)));
    });
    if (!cfg.static_dir.empty() && fs::is_directory(cfg.static_dir)) {
      http.set_mount_point("/ui", cfg.static_dir.string());
    }
  }
};

Service::Service(ServiceConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::run() {
  impl_->run_entered = true;
  if (!impl_->stopping) impl_->http.listen_after_bind();
  impl_->run_exited = true;
}

void Service::stop() { impl_->shutdown(); }

void Service::wait_idle() {
  std::unique_lock lock(impl_->jobs_mu);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && impl_->active == 0; });
}

}  // namespace somnus::service
