// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "somnus/container.hpp"
#include "somnus/edf.hpp"
#include "somnus/error.hpp"
#include "somnus/eval.hpp"
#include "somnus/features.hpp"
#include "somnus/parallel.hpp"
#include "somnus/report.hpp"
#include "somnus/score.hpp"
#include "somnus/service.hpp"
#include "somnus/spectral.hpp"
#include "somnus/store.hpp"
#include "somnus/synthgen.hpp"
#include "somnus/train.hpp"

namespace somnus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path data_dir() {
  const char* env = std::getenv("SOMNUS_DATA_DIR");
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::current_path();
}

namespace {

unsigned threads_of(const Common& c) { return c.threads == 0 ? default_threads() : c.threads; }

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

void echo_seed(std::ostream& out, const Common& c) { out << "# seed=" << c.seed << '\n'; }

// --- datasets ---------------------------------------------------------------

struct Item {
  std::string id;
  fs::path recording;
  fs::path sidecar;  // empty when there is none
};

bool is_recording_file(const fs::path& p) {
  const auto ext = p.extension();
  return ext == ".edf" || ext == ".EDF" || ext == ".somn";
}

Item item_for_file(const fs::path& p) {
  Item it{p.stem().string(), p, {}};
  const fs::path hyp = fs::path(p).replace_extension(".hyp");
  if (fs::is_regular_file(hyp)) it.sidecar = hyp;
  return it;
}

/// A recording file, a directory with a synth manifest, or a directory of
/// .edf/.somn files with optional same-stem .hyp sidecars (sorted by name).
std::vector<Item> scan_dataset(const fs::path& input) {
  if (input.empty()) throw IoError("--input is required");
  if (fs::is_regular_file(input)) return {item_for_file(input)};
  if (!fs::is_directory(input)) throw IoError("no such file or directory: " + input.string());
  std::vector<Item> items;
  const fs::path manifest = input / "manifest.tsv";
  if (fs::is_regular_file(manifest)) {
    for (const auto& e : parse_fixture_manifest(read_text(manifest))) {
      items.push_back({e.id, input / e.recording_file, e.sidecar_file.empty() ? fs::path() : input / e.sidecar_file});
    }
    return items;
  }
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && is_recording_file(e.path())) items.push_back(item_for_file(e.path()));
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  if (items.empty()) throw DataError(input.string() + ": no recordings found");
  return items;
}

Recording load_item(const Item& it) {
  return load_recording(it.recording.string(), it.sidecar.empty() ? std::string() : it.sidecar.string());
}

std::vector<std::string> read_id_list(const fs::path& p) {
  std::vector<std::string> ids;
  std::istringstream is(read_text(p));
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() != '#') ids.push_back(line);
  }
  return ids;
}

// Model inputs read back from featurize output. Expert rows are stored as
// f64; spectrograms as f32 linear power, which is what the in-memory path
// rounds through before converting to dB.
train::RecordingData inputs_from_features(const fs::path& dir, const Item& it, nn::Representation rep) {
  train::RecordingData d;
  d.id = it.id;
  d.representation = rep;
  d.dim = nn::input_shape_for(rep).size();
  if (rep == nn::Representation::Expert) {
    const FeatureMatrix fm = parse_feature_file(read_file((dir / (it.id + ".somf")).string()));
    d.n_epochs = fm.n_epochs;
    d.inputs = fm.values;
  } else if (rep == nn::Representation::Spectrogram) {
    const SpectrogramTensor t = parse_spectrogram_file(read_file((dir / (it.id + ".soms")).string()));
    if (t.view != "average") throw DataError(it.id + ".soms holds view '" + t.view + "', need 'average'");
    d.n_epochs = t.n_epochs;
    d.inputs.resize(t.values.size());
    std::transform(t.values.begin(), t.values.end(), d.inputs.begin(), [](float v) { return to_db(v); });
  } else {
    throw ParameterError("--features supports the expert and spectrogram representations only");
  }
  if (it.sidecar.empty()) throw DataError(it.id + ": training needs an expert sidecar");
  const Hypnogram h = read_sidecar(it.sidecar.string());
  if (h.size() != d.n_epochs) {
    throw DataError(it.id + ": sidecar has " + std::to_string(h.size()) + " epochs, features have " +
                    std::to_string(d.n_epochs));
  }
  for (Stage s : h.stages) d.labels.push_back(stage_index(s));
  return d;
}

train::RecordingData inputs_for(const Item& it, nn::Representation rep, const std::string& features, unsigned threads) {
  if (!features.empty()) return inputs_from_features(features, it, rep);
  const Recording r = derive_montage(load_item(it));
  train::RecordingData d = train::recording_inputs(r, rep, threads);
  if (d.labels.empty()) throw DataError(it.id + ": training needs an expert sidecar");
  return d;
}

struct Prepared {
  train::SplitPlan plan;
  std::vector<train::RecordingData> training;
  std::vector<train::RecordingData> validation;
};

Prepared prepare(const Common& c, const TrainArgs& a, nn::Representation rep) {
  if (a.split.size() != 3) throw ParameterError("--split takes three fractions");
  const auto items = scan_dataset(c.input);
  std::map<std::string, Item> by_id;
  std::vector<std::string> ids;
  for (const auto& it : items) {
    ids.push_back(it.id);
    by_id.emplace(it.id, it);
  }
  Prepared p;
  p.plan = train::make_split(ids, {a.split[0], a.split[1], a.split[2]}, c.seed);
  if (p.plan.train_ids.empty() || p.plan.val_ids.empty()) {
    throw DataError("split leaves no training or no validation recordings; add recordings or change --split");
  }
  const unsigned th = threads_of(c);
  for (const auto& id : p.plan.train_ids) p.training.push_back(inputs_for(by_id.at(id), rep, a.features, th));
  for (const auto& id : p.plan.val_ids) p.validation.push_back(inputs_for(by_id.at(id), rep, a.features, th));
  return p;
}

train::TrainConfig train_config(const Common& c, const TrainArgs& a) {
  train::TrainConfig cfg;
  cfg.learning_rate = a.learning_rate;
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.max_epochs;
  cfg.patience = a.patience;
  cfg.seed = c.seed;
  cfg.threads = threads_of(c);
  return cfg;
}

void write_split(const fs::path& dir, const std::string& name, const train::SplitPlan& plan) {
  const json j{{"seed", plan.seed}, {"train_ids", plan.train_ids}, {"val_ids", plan.val_ids}, {"test_ids", plan.test_ids}};
  write_text(dir / (name + ".split.json"), j.dump(2) + "\n");
  std::string ids;
  for (const auto& id : plan.test_ids) ids += id + "\n";
  write_text(dir / (name + ".test-ids"), ids);
}

std::size_t effective_lookback(nn::Family f, std::size_t given) {
  if (given != 0) return given;
  return (f == nn::Family::LSTM || f == nn::Family::RCNN) ? 10 : 1;
}

std::string default_name(nn::Family f, nn::Representation r, std::size_t lookback) {
  std::string s = std::string(nn::family_name(f)) + "-" + std::string(nn::representation_name(r)) + "-l" +
                  std::to_string(lookback);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return s;
}

void print_model_summary(std::ostream& out, const train::TrainedModel& m, const fs::path& path) {
  out << std::fixed << std::setprecision(6);
  out << "model\t" << m.name << '\n'
      << "path\t" << path.string() << '\n'
      << "val_kappa\t" << m.val_kappa << '\n'
      << "val_accuracy\t" << m.val_accuracy << '\n'
      << "val_loss\t" << m.val_loss << '\n'
      << "steps\t" << m.history.steps << '\n';
  out.unsetf(std::ios::floatfield);
}

train::TrainedModel resolve_model(const std::string& model) {
  if (model.empty()) throw IoError("--model is required");
  if (fs::is_regular_file(model)) return store::load_model_file(model);
  const store::ModelStore st(data_dir() / "models");
  if (!st.contains(model)) {
    throw IoError("model '" + model + "' is neither a file nor in the store at " + st.dir().string());
  }
  return st.load(model);
}

}  // namespace

// ---------------------------------------------------------------------------

int run_synth(const Common& c, const SynthArgs& a, std::ostream& out) {
  if (a.format != "somn" && a.format != "edf") throw ParameterError("--format must be somn or edf");
  if (a.count == 0 || a.epochs == 0) throw ParameterError("--count and --epochs must be positive");
  const SynthParams params = a.params.empty() ? SynthParams{} : parse_synth_params(read_text(a.params));
  const fs::path dir = or_default(c.out, data_dir() / "synth");
  fs::create_directories(dir);
  echo_seed(out, c);

  std::vector<FixtureEntry> entries;
  for (std::size_t i = 0; i < a.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth-%03zu", i);
    const std::uint64_t seed = Rng::mix(c.seed, i);
    const Hypnogram h = gen_hypnogram(seed, a.epochs, params.transitions);
    Recording r = gen_recording(h, seed, params.signatures, params.jitter, threads_of(c));
    r.id = id;
    FixtureEntry e{id, seed, a.epochs, std::string(id) + "." + a.format, std::string(id) + ".hyp"};
    write_file((dir / e.recording_file).string(), a.format == "edf" ? write_edf(r) : write_container(r));
    write_sidecar((dir / e.sidecar_file).string(), h);
    out << e.id << '\t' << e.seed << '\t' << e.n_epochs << '\n';
    entries.push_back(std::move(e));
  }
  write_text(dir / "manifest.tsv", format_fixture_manifest(entries));
  write_text(dir / "params.txt", format_synth_params(params));
  return 0;
}

int run_featurize(const Common& c, const FeaturizeArgs& a, std::ostream& out) {
  const auto items = scan_dataset(c.input);
  const fs::path dir = or_default(c.out, data_dir() / "features");
  fs::create_directories(dir);
  echo_seed(out, c);
  for (const auto& it : items) {
    const Recording r = derive_montage(load_item(it));
    const RecordingFeatures f = extract_features(r, threads_of(c));
    write_file((dir / (it.id + ".somf")).string(), write_feature_file(f.expert));
    write_file((dir / (it.id + ".soms")).string(), write_spectrogram_file(f.average, canonical_tapers()));
    if (a.csv) {
      write_text(dir / (it.id + ".features.csv"), features_csv(f.expert));
      write_text(dir / (it.id + ".spectrogram.csv"), spectrogram_csv(f.average));
    }
    out << it.id << '\t' << f.expert.n_epochs << '\n';
  }
  return 0;
}

int run_train(const Common& c, const TrainArgs& a, std::ostream& out) {
  const nn::Family family = nn::parse_family(a.family);
  const nn::Representation rep = nn::parse_representation(a.representation);
  const std::size_t lookback = effective_lookback(family, a.lookback);
  nn::ModelSpec spec = nn::preset_spec(nn::parse_preset(c.preset), family, rep, lookback);
  spec.seed = c.seed;
  spec.validate();
  echo_seed(out, c);

  const Prepared p = prepare(c, a, rep);
  train::TrainedModel m = train::fit(spec, p.training, p.validation, train_config(c, a));
  m.name = a.name.empty() ? default_name(family, rep, lookback) : a.name;

  const store::ModelStore st(or_default(c.out, data_dir() / "models"));
  st.save(m.name, m);
  write_split(st.dir(), m.name, p.plan);
  print_model_summary(out, m, st.path_of(m.name));
  return 0;
}

int run_search(const Common& c, const TrainArgs& a, std::ostream& out) {
  train::SearchOptions opt;
  opt.family = nn::parse_family(a.family);
  opt.representation = nn::parse_representation(a.representation);
  opt.preset = nn::parse_preset(c.preset);
  opt.budget = a.budget;
  opt.seed = c.seed;
  opt.threads = threads_of(c);
  opt.base = train_config(c, a);
  opt.base.threads = 1;  // trials already run in parallel
  const train::SearchSpace space;
  echo_seed(out, c);

  const Prepared p = prepare(c, a, opt.representation);
  train::SearchResult r = train::random_search(space, p.training, p.validation, opt);
  const store::ModelStore st(or_default(c.out, data_dir() / "models"));
  fs::create_directories(st.dir());
  const std::string name = a.name.empty() ? default_name(opt.family, opt.representation, 0) + "-search" : a.name;
  std::string manifest;
  for (const auto& line : r.manifest) manifest += line + "\n";
  write_text(st.dir() / (name + ".trials.jsonl"), manifest);
  write_split(st.dir(), name, p.plan);

  out << std::fixed << std::setprecision(6);
  for (const auto& t : r.ranked) {
    out << "trial " << t.index << '\t' << (t.ok ? "ok" : "failed") << "\tval_kappa " << t.val_kappa << "\tval_accuracy "
        << t.val_accuracy << '\n';
  }
  out.unsetf(std::ios::floatfield);
  if (!r.best) throw DataError("every search trial failed; see " + (st.dir() / (name + ".trials.jsonl")).string());
  r.best->name = name;
  st.save(name, *r.best);
  print_model_summary(out, *r.best, st.path_of(name));
  return 0;
}

int run_score(const Common& c, const ScoreArgs& a, std::ostream& out) {
  const train::TrainedModel m = resolve_model(c.model);
  auto items = scan_dataset(c.input);
  if (!a.sidecar.empty()) {
    if (items.size() != 1) throw ParameterError("--sidecar applies to a single recording file");
    items.front().sidecar = a.sidecar;
  }
  if (!a.ids.empty()) {
    const auto wanted = read_id_list(a.ids);
    const std::set<std::string> keep(wanted.begin(), wanted.end());
    std::erase_if(items, [&](const Item& it) { return !keep.contains(it.id); });
    if (items.size() != keep.size()) throw DataError(a.ids + ": some listed ids are not in " + c.input);
  }
  std::optional<fs::path> dir;
  if (!c.out.empty()) {
    dir = fs::path(c.out);
    fs::create_directories(*dir);
  }
  echo_seed(out, c);
  out << "# model=" << m.name << '\n';

  score::ScoreOptions opt;
  opt.threads = threads_of(c);
  for (const auto& it : items) {
    const Recording r = load_item(it);
    if (!a.quiet) out << "# recording=" << r.id << '\n' << score::kEpochLineHeader << '\n';
    std::string lines;
    const auto res = score::score_recording(m, r, opt, [&](std::size_t first, std::span<const StageProbs> p) {
      std::string chunk;
      for (std::size_t i = 0; i < p.size(); ++i) chunk += score::format_epoch_line(first + i, p[i]) + "\n";
      if (!a.quiet) out << chunk << std::flush;
      lines += chunk;
    });
    if (dir) {
      Hypnogram stages = res.predicted;
      stages.confidence.reset();
      write_sidecar((*dir / (res.recording_id + ".hyp")).string(), stages);
      write_text(*dir / (res.recording_id + ".epochs.tsv"), std::string(score::kEpochLineHeader) + "\n" + lines);
      write_text(*dir / (res.recording_id + ".score.json"), score::score_document(res) + "\n");
    }
  }
  return 0;
}

int run_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  if (a.expert.empty() || a.pred.empty()) throw IoError("--expert and --pred are required");
  std::vector<eval::LabelledPair> pairs;
  const fs::path expert(a.expert), pred(a.pred);
  if (fs::is_directory(pred)) {
    if (!fs::is_directory(expert)) throw IoError("--expert must be a directory when --pred is one");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(pred)) {
      if (e.is_regular_file() && e.path().extension() == ".hyp") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError(pred.string() + ": no .hyp files");
    for (const auto& f : files) {
      const fs::path ex = expert / f.filename();
      if (!fs::is_regular_file(ex)) throw IoError("no expert sidecar " + ex.string() + " for " + f.string());
      pairs.push_back({f.stem().string(), read_sidecar(ex.string()), read_sidecar(f.string())});
    }
  } else {
    pairs.push_back({pred.stem().string(), read_sidecar(expert.string()), read_sidecar(pred.string())});
  }
  const std::string text = eval::format_metrics_report(eval::evaluate(pairs));
  echo_seed(out, c);
  out << text;
  if (!c.out.empty()) write_text(c.out, text);
  return 0;
}

int run_report(const Common& c, const ReportArgs& a, std::ostream& out) {
  if (c.input.empty()) throw IoError("--input is required");
  const SleepReport r = sleep_stats(read_sidecar(c.input));
  const std::string text = a.json ? sleep_report_json(r) + "\n" : format_sleep_report(r);
  echo_seed(out, c);
  out << text;
  if (!c.out.empty()) write_text(c.out, text);
  return 0;
}

int run_serve(const Common& c, const ServeArgs& a, std::ostream& out) {
  service::ServiceConfig cfg;
  cfg.data_dir = or_default(c.out, data_dir());
  cfg.model_dir = or_default(a.model_dir, cfg.data_dir / "models");
  cfg.static_dir = a.static_dir;
  cfg.workers = a.workers;
  cfg.max_upload_bytes = a.max_upload_mb << 20;

  // Route SIGINT/SIGTERM to one waiting thread so shutdown runs outside a
  // signal handler. The mask is set before any other thread starts.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  service::Service svc(cfg);
  const int port = svc.bind(a.host, a.port);
  echo_seed(out, c);
  out << "listening on http://" << a.host << ':' << port << '\n' << std::flush;
  std::atomic<bool> stopped{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&sigs, &sig);
    stopped = true;
    svc.stop();
  });
  svc.run();
  // run() also returns when the accept loop fails; wake the waiter then.
  if (!stopped) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace somnus::cli
