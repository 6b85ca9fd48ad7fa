// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "../support/train_fixtures.hpp"
#include "somnus/container.hpp"
#include "somnus/edf.hpp"
#include "somnus/error.hpp"
#include "somnus/score.hpp"
#include "somnus/service.hpp"
#include "somnus/spectral.hpp"
#include "somnus/store.hpp"

// Last: <resolv.h> defines `_res`, which clashes with Eigen.
#include <httplib.h>

using namespace somnus;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string as_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

train::TrainedModel tiny_model() {
  const auto tr = fixtures::synth_inputs(700, 2, 20);
  const auto va = fixtures::synth_inputs(701, 1, 20);
  auto spec = nn::preset_spec(nn::Preset::Desk, nn::Family::LSTM, nn::Representation::Expert, 4);
  spec.lstm_hidden = 8;
  spec.lstm_layers = 1;
  train::TrainConfig c;
  c.max_epochs = 2;
  auto m = train::fit(spec, tr, va, c);
  m.name = "tiny";
  return m;
}

class Running {
 public:
  explicit Running(service::ServiceConfig cfg) : svc_(std::move(cfg)) {
    port_ = svc_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { svc_.run(); });
  }
  ~Running() {
    svc_.stop();
    thread_.join();
  }
  int port() const { return port_; }
  service::Service& svc() { return svc_; }

 private:
  service::Service svc_;
  int port_ = 0;
  std::thread thread_;
};

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("somnus_service_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_ / "ui");
    std::ofstream(root_ / "ui" / "index.html") << "<!doctype html><title>review</title>\n";
    model_ = new train::TrainedModel(tiny_model());
    store::ModelStore(root_ / "models").save("tiny", *model_);

    recording_ = new Recording(fixtures::synth_recording(702, 40));
    edf_ = new Bytes(write_edf(*recording_));
    start();
  }

  static void TearDownTestSuite() {
    delete server_;
    server_ = nullptr;
    delete model_;
    delete recording_;
    delete edf_;
    fs::remove_all(root_);
  }

  static service::ServiceConfig config() {
    service::ServiceConfig cfg;
    cfg.data_dir = root_ / "data";
    cfg.model_dir = root_ / "models";
    cfg.static_dir = root_ / "ui";
    cfg.max_upload_bytes = std::size_t{48} << 20;
    return cfg;
  }

  static void start() { server_ = new Running(config()); }
  static void restart() {
    delete server_;
    start();
  }

  static httplib::Client client() {
    httplib::Client c("127.0.0.1", server_->port());
    c.set_read_timeout(120, 0);
    return c;
  }

  static json get_json(const std::string& path, int expect = 200) {
    auto c = client();
    auto res = c.Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return json();
    EXPECT_EQ(res->status, expect) << path << ": " << res->body;
    return json::parse(res->body);
  }

  static httplib::Result upload(const std::string& content, const std::string& filename,
                                const std::optional<std::string>& sidecar = std::nullopt) {
    httplib::MultipartFormDataItems items{{"recording", content, filename, "application/octet-stream"}};
    if (sidecar) items.push_back({"sidecar", *sidecar, "expert.hyp", "text/plain"});
    return client().Post("/cases", items);
  }

  static std::string upload_ok(const std::string& content, const std::string& filename,
                               const std::optional<std::string>& sidecar = std::nullopt) {
    auto res = upload(content, filename, sidecar);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    return json::parse(res->body).at("case_id").get<std::string>();
  }

  static httplib::Result request_score(const std::string& id, const std::string& body) {
    return client().Post("/cases/" + id + "/score", body, "application/json");
  }

  // Polls until the case leaves `running`; returns every epochs_done seen.
  static std::vector<std::size_t> poll_until_settled(const std::string& id, json& last) {
    std::vector<std::size_t> seen;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes(5);
    while (std::chrono::steady_clock::now() < deadline) {
      last = get_json("/cases/" + id);
      seen.push_back(last.at("epochs_done").get<std::size_t>());
      if (last.at("state") == "running") {
        EXPECT_EQ(last.at("partial").at("hypnogram").size(), seen.back());
        EXPECT_LE(seen.back(), last.at("epoch_count").get<std::size_t>());
      }
      if (last.at("state") != "running") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return seen;
  }

  static json score_to_completion(const std::string& id) {
    auto res = request_score(id, R"({"model": "tiny"})");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 202) << res->body;
    json last;
    poll_until_settled(id, last);
    EXPECT_EQ(last.at("state"), "done") << last.dump();
    return last;
  }

  static inline fs::path root_;
  static inline train::TrainedModel* model_ = nullptr;
  static inline Recording* recording_ = nullptr;
  static inline Bytes* edf_ = nullptr;
  static inline Running* server_ = nullptr;
};

}  // namespace

TEST(Base64, KnownVectors) {
  auto enc = [](std::string_view s) {
    return service::base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foo"), "Zm9v");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  const auto dec = service::base64_decode("Zm9vYmE=");
  EXPECT_EQ(std::string(dec.begin(), dec.end()), "fooba");
  EXPECT_THROW(service::base64_decode("Zm9"), DataError);
  EXPECT_THROW(service::base64_decode("Zm!v"), DataError);
}

TEST(Base64, RoundTripsEveryByte) {
  std::vector<std::uint8_t> all(256);
  for (int i = 0; i < 256; ++i) all[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
  for (std::size_t n = 0; n <= all.size(); n += 37) {
    const std::span<const std::uint8_t> head(all.data(), n);
    const auto back = service::base64_decode(service::base64_encode(head));
    EXPECT_TRUE(std::equal(back.begin(), back.end(), head.begin(), head.end()));
  }
}

TEST_F(ServiceTest, HealthAndUnknownRoute) {
  const json h = get_json("/healthz");
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("api_version"), service::kApiVersion);
  const json e = get_json("/no/such/route", 404);
  EXPECT_EQ(e.at("status"), 404);
}

TEST_F(ServiceTest, SchemaDocumentMatchesRepositoryFile) {
  const std::string file = slurp(fs::path(SOMNUS_SOURCE_DIR) / "api" / "schema.json");
  EXPECT_EQ(service::api_schema(), file);
  auto res = client().Get("/api/schema.json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, file);
  EXPECT_EQ(json::parse(res->body).at("api_version"), service::kApiVersion);
}

TEST_F(ServiceTest, StaticBundleIsServed) {
  auto res = client().Get("/ui/index.html");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, slurp(root_ / "ui" / "index.html"));
  auto missing = client().Get("/ui/absent.js");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
}

TEST_F(ServiceTest, ModelListing) {
  const json m = get_json("/models");
  ASSERT_EQ(m.at("models").size(), 1u);
  const json& d = m["models"][0];
  EXPECT_EQ(d.at("name"), "tiny");
  EXPECT_EQ(d.at("family"), "lstm");
  EXPECT_EQ(d.at("representation"), "expert");
  EXPECT_EQ(d.at("lookback"), 4);
  EXPECT_EQ(d.at("val_kappa").get<double>(), model_->val_kappa);
  EXPECT_EQ(d.at("format_version"), train::kModelFormatVersion);
}

TEST_F(ServiceTest, UploadCreatesPendingCase) {
  auto res = upload(as_string(*edf_), "night01.edf");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201) << res->body;
  const json j = json::parse(res->body);
  EXPECT_EQ(j.at("state"), "pending");
  EXPECT_EQ(j.at("epoch_count"), 40);
  EXPECT_EQ(j.at("recording_id"), "night01");
  EXPECT_EQ(j.at("has_expert"), false);

  const json rec = get_json("/cases/" + j.at("case_id").get<std::string>());
  EXPECT_EQ(rec.at("state"), "pending");
  EXPECT_EQ(rec.at("epochs_done"), 0);
  EXPECT_TRUE(rec.at("result").is_null());
  EXPECT_TRUE(rec.at("partial").is_null());
}

TEST_F(ServiceTest, DuplicateUploadGetsDistinctId) {
  const std::string a = upload_ok(as_string(*edf_), "dup.edf");
  const std::string b = upload_ok(as_string(*edf_), "dup.edf");
  EXPECT_NE(a, b);
}

TEST_F(ServiceTest, MalformedUploadsAreRejected) {
  const std::string edf = as_string(*edf_);
  auto truncated = upload(edf.substr(0, 1000), "cut.edf");
  ASSERT_TRUE(truncated);
  EXPECT_EQ(truncated->status, 422);
  const json e = json::parse(truncated->body);
  EXPECT_EQ(e.at("status"), 422);
  EXPECT_NE(e.at("error").get<std::string>().find("byte offset"), std::string::npos) << e.dump();

  auto missing = client().Post("/cases", "not multipart", "text/plain");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 422);

  auto bad_sidecar = upload(edf, "x.edf", std::string("W\nN2\n"));
  ASSERT_TRUE(bad_sidecar);
  EXPECT_EQ(bad_sidecar->status, 422);
  EXPECT_NE(bad_sidecar->body.find("sidecar"), std::string::npos);

  Recording short_rec = fixtures::synth_recording(703, 1);
  for (auto& c : short_rec.channels) c.samples.resize(4000);
  short_rec.expert_hypnogram.reset();
  auto empty = upload(as_string(write_container(short_rec)), "short.somn");
  ASSERT_TRUE(empty);
  EXPECT_EQ(empty->status, 422);
  EXPECT_NE(empty->body.find("no complete epochs"), std::string::npos);
}

TEST_F(ServiceTest, OversizedUploadIs413) {
  auto res = upload(std::string((std::size_t{49} << 20), 'x'), "big.edf");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
}

TEST_F(ServiceTest, ScoreRequestErrors) {
  const std::string id = upload_ok(as_string(*edf_), "errs.edf");
  auto unknown_case = request_score("case-999999", R"({"model": "tiny"})");
  ASSERT_TRUE(unknown_case);
  EXPECT_EQ(unknown_case->status, 404);
  auto unknown_model = request_score(id, R"({"model": "absent"})");
  ASSERT_TRUE(unknown_model);
  EXPECT_EQ(unknown_model->status, 404);
  auto bad_json = request_score(id, "{model");
  ASSERT_TRUE(bad_json);
  EXPECT_EQ(bad_json->status, 400);
  auto no_model = request_score(id, R"({"name": "tiny"})");
  ASSERT_TRUE(no_model);
  EXPECT_EQ(no_model->status, 400);
  auto escape = request_score(id, R"({"model": "../models/tiny"})");
  ASSERT_TRUE(escape);
  EXPECT_EQ(escape->status, 404);
  get_json("/cases/case-999999", 404);
}

TEST_F(ServiceTest, ProgressIsMonotoneAndSecondRequestConflicts) {
  const Recording longer = fixtures::synth_recording(704, 240);
  const std::string id = upload_ok(as_string(write_container(longer)), "long.somn");
  auto first = request_score(id, R"({"model": "tiny"})");
  ASSERT_TRUE(first);
  ASSERT_EQ(first->status, 202);
  EXPECT_EQ(json::parse(first->body).at("state"), "running");
  auto second = request_score(id, R"({"model": "tiny"})");
  ASSERT_TRUE(second);
  EXPECT_EQ(second->status, 409);

  json last;
  const auto seen = poll_until_settled(id, last);
  EXPECT_EQ(last.at("state"), "done");
  ASSERT_FALSE(seen.empty());
  for (std::size_t i = 1; i < seen.size(); ++i) EXPECT_LE(seen[i - 1], seen[i]);
  EXPECT_EQ(seen.back(), 240u);
  EXPECT_EQ(last.at("result").at("hypnogram").size(), 240u);
}

TEST_F(ServiceTest, ScoringEqualsDirectScoringOfTheSameFiles) {
  const std::string sidecar = format_sidecar(*recording_->expert_hypnogram);
  const std::string id = upload_ok(as_string(*edf_), "night02.edf", sidecar);
  const json done = score_to_completion(id);

  // What the CLI does: load the file pair from disk and score it.
  const fs::path dir = root_ / "cli";
  fs::create_directories(dir);
  write_file((dir / "night02.edf").string(), *edf_);
  write_sidecar((dir / "night02.hyp").string(), *recording_->expert_hypnogram);
  const Recording r = load_recording((dir / "night02.edf").string(), (dir / "night02.hyp").string());
  const auto direct = score::score_recording(*model_, r);
  EXPECT_EQ(done.at("result"), json::parse(score::score_document(direct)));
  EXPECT_EQ(done.at("result").at("hypnogram").size(), done.at("epoch_count").get<std::size_t>());
  EXPECT_EQ(done.at("result").at("recording_id"), "night02");
  EXPECT_EQ(done.at("epochs_done"), 40);

  // GET is side-effect free: repeated reads are byte-identical.
  const auto a = client().Get("/cases/" + id);
  const auto b = client().Get("/cases/" + id);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->body, b->body);
}

TEST_F(ServiceTest, IdenticalExpertHasNoDisagreements) {
  const std::string first = upload_ok(as_string(*edf_), "agree.edf");
  const json scored = score_to_completion(first);
  Hypnogram pred;
  for (const auto& s : scored.at("result").at("hypnogram")) pred.stages.push_back(parse_stage(s.get<std::string>()));

  const std::string second = upload_ok(as_string(*edf_), "agree.edf", format_sidecar(pred));
  const json again = score_to_completion(second);
  EXPECT_TRUE(again.at("result").at("disagreements").is_array());
  EXPECT_TRUE(again.at("result").at("disagreements").empty());

  const std::string third = upload_ok(as_string(*edf_), "agree.edf", format_sidecar(*recording_->expert_hypnogram));
  const json with_truth = score_to_completion(third);
  std::vector<std::size_t> expected;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t] != (*recording_->expert_hypnogram)[t]) expected.push_back(t);
  }
  EXPECT_EQ(with_truth.at("result").at("disagreements").get<std::vector<std::size_t>>(), expected);
}

TEST_F(ServiceTest, EpochDetail) {
  const std::string sidecar = format_sidecar(*recording_->expert_hypnogram);
  const std::string id = upload_ok(as_string(*edf_), "detail.edf", sidecar);
  const Recording uploaded = parse_edf(*edf_);

  const json pre = get_json("/cases/" + id + "/epochs/0");
  EXPECT_TRUE(pre.at("stage_pred").is_null());
  EXPECT_EQ(pre.at("stage_expert"), std::string(stage_symbol((*recording_->expert_hypnogram)[0])));

  const json done = score_to_completion(id);
  const json d = get_json("/cases/" + id + "/epochs/0");
  EXPECT_EQ(d.at("epoch"), 0);
  EXPECT_EQ(d.at("epoch_count"), 40);
  ASSERT_EQ(d.at("channels").size(), 6u);
  EXPECT_EQ(d.at("waveform").at("shape"), json({6, 6000}));
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(d["channels"][c], uploaded.channels[c].label);
    const auto bytes = service::base64_decode(d["waveform"]["data"][c].get<std::string>());
    ASSERT_EQ(bytes.size(), 6000u * sizeof(float));
    EXPECT_EQ(std::memcmp(bytes.data(), uploaded.channels[c].samples.data(), bytes.size()), 0) << c;
  }

  const auto& grid = d.at("spectrogram").at("values");
  ASSERT_EQ(grid.size(), 29u);
  for (const auto& row : grid) ASSERT_EQ(row.size(), 257u);
  EXPECT_EQ(d["spectrogram"]["shape"], json({29, 257}));
  const MultitaperPsd psd(canonical_tapers());
  const auto ref = to_db(spectrogram_epoch(epoch_channels(uploaded, 0), psd).average);
  for (std::size_t s = 0; s < 29; s += 7) {
    for (std::size_t k = 0; k < 257; k += 16) EXPECT_EQ(grid[s][k].get<double>(), ref.at(s, k));
  }

  EXPECT_EQ(d.at("stage_pred"), done.at("result").at("hypnogram").at(0));
  EXPECT_EQ(d.at("probs"), done.at("result").at("probs").at(0));
  EXPECT_EQ(d.at("confidence"), done.at("result").at("confidence").at(0));

  get_json("/cases/" + id + "/epochs/39");
  get_json("/cases/" + id + "/epochs/40", 404);
  get_json("/cases/" + id + "/epochs/99999999999999999999", 404);
  get_json("/cases/case-999999/epochs/0", 404);
}

TEST_F(ServiceTest, CasesSurviveRestart) {
  const std::string done_id = upload_ok(as_string(*edf_), "persist.edf");
  score_to_completion(done_id);
  const std::string pending_id = upload_ok(as_string(*edf_), "persist.edf");
  const auto before = client().Get("/cases/" + done_id);
  ASSERT_TRUE(before);

  // Simulate a crash mid-scoring for the pending case.
  const fs::path state_file = root_ / "data" / "cases" / pending_id / "state.json";
  json st = json::parse(slurp(state_file));
  st["state"] = "running";
  std::ofstream(state_file, std::ios::trunc) << st.dump();

  restart();
  const auto after = client().Get("/cases/" + done_id);
  ASSERT_TRUE(after);
  EXPECT_EQ(after->body, before->body);
  const json interrupted = get_json("/cases/" + pending_id);
  EXPECT_EQ(interrupted.at("state"), "pending");
  EXPECT_FALSE(interrupted.at("error").is_null());

  const std::string fresh = upload_ok(as_string(*edf_), "persist.edf");
  EXPECT_GT(fresh, pending_id);
  const json list = get_json("/cases");
  bool found = false;
  for (const auto& c : list.at("cases")) found |= c.at("case_id") == done_id;
  EXPECT_TRUE(found);
  score_to_completion(pending_id);
}
