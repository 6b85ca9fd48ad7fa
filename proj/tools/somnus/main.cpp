// SPDX-License-Identifier: Apache-2.0
// somnus: batch front end. Exit codes: 0 success, 1 usage error, 2 data error.
#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "somnus/error.hpp"

namespace {

using namespace somnus::cli;

void add_common(CLI::App& sub, Common& c, bool input, bool model) {
  if (input) sub.add_option("-i,--input", c.input, "Input file or directory");
  if (model) sub.add_option("-m,--model", c.model, "Model file, or a name in $SOMNUS_DATA_DIR/models");
  sub.add_option("-o,--out", c.out, "Output file or directory");
  sub.add_option("-s,--seed", c.seed, "Seed; echoed as the first output line")->capture_default_str();
  sub.add_option("--preset", c.preset, "Model size preset")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  sub.add_option("-j,--threads", c.threads, "Worker threads (0: all cores)")->capture_default_str();
}

void add_training(CLI::App& sub, TrainArgs& t) {
  sub.add_option("--family", t.family, "lr, mlp, cnn1d, cnn2d, lstm or rcnn")->capture_default_str();
  sub.add_option("--representation", t.representation, "expert, spectrogram or raw")->capture_default_str();
  sub.add_option("--features", t.features, "Directory of featurize output to read inputs from");
  sub.add_option("--split", t.split, "Train, validation and test fractions")->expected(3)->capture_default_str();
  sub.add_option("--lr", t.learning_rate, "Learning rate")->capture_default_str();
  sub.add_option("--max-epochs", t.max_epochs, "Passes over the training data")->capture_default_str();
  sub.add_option("--batch-size", t.batch_size, "Minibatch size")->capture_default_str();
  sub.add_option("--patience", t.patience, "Evaluations without improvement before stopping")->capture_default_str();
  sub.add_option("--name", t.name, "Model name in the store");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sleep staging from six-channel EEG: synthesis, features, training, scoring, service"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "somnus 0.1.0");
  app.footer("Environment: SOMNUS_DATA_DIR sets the default data directory (default: current directory).");

  Common common;
  SynthArgs synth;
  FeaturizeArgs featurize;
  TrainArgs training;
  ScoreArgs score;
  EvalArgs evaluation;
  ReportArgs report;
  ServeArgs serve;

  auto* s_synth = app.add_subcommand("synth", "Generate synthetic recordings with expert sidecars");
  add_common(*s_synth, common, false, false);
  s_synth->add_option("-n,--count", synth.count, "Number of recordings")->capture_default_str();
  s_synth->add_option("-e,--epochs", synth.epochs, "Epochs per recording")->capture_default_str();
  s_synth->add_option("--format", synth.format, "Recording file format")
      ->check(CLI::IsMember({"somn", "edf"}))
      ->capture_default_str();
  s_synth->add_option("--params", synth.params, "Generator parameter file")->check(CLI::ExistingFile);

  auto* s_feat = app.add_subcommand("featurize", "Write expert features and average spectrograms");
  add_common(*s_feat, common, true, false);
  s_feat->add_flag("--csv", featurize.csv, "Also write CSV exports");

  auto* s_train = app.add_subcommand("train", "Train one model and add it to the store");
  add_common(*s_train, common, true, false);
  add_training(*s_train, training);
  s_train->add_option("--lookback", training.lookback, "Epochs of context (0: 10 for sequence models, else 1)");

  auto* s_search = app.add_subcommand("search", "Random hyperparameter search; stores the best model");
  add_common(*s_search, common, true, false);
  add_training(*s_search, training);
  s_search->add_option("--budget", training.budget, "Number of trials")->capture_default_str();

  auto* s_score = app.add_subcommand("score", "Score recordings, streaming per-epoch predictions");
  add_common(*s_score, common, true, true);
  s_score->add_option("--sidecar", score.sidecar, "Expert sidecar for a single recording")->check(CLI::ExistingFile);
  s_score->add_option("--ids", score.ids, "Only score the ids listed in this file")->check(CLI::ExistingFile);
  s_score->add_flag("-q,--quiet", score.quiet, "Do not stream epoch lines");

  auto* s_eval = app.add_subcommand("eval", "Agreement metrics between expert and predicted sidecars");
  add_common(*s_eval, common, false, false);
  s_eval->add_option("--expert", evaluation.expert, "Expert sidecar file or directory")->required();
  s_eval->add_option("--pred", evaluation.pred, "Predicted sidecar file or directory")->required();

  auto* s_report = app.add_subcommand("report", "Sleep statistics of a hypnogram sidecar");
  add_common(*s_report, common, true, false);
  s_report->add_flag("--json", report.json, "Print the JSON document");

  auto* s_serve = app.add_subcommand("serve", "Run the HTTP scoring service (--out is the data directory)");
  add_common(*s_serve, common, false, false);
  s_serve->add_option("--host", serve.host, "Listen address")->capture_default_str();
  s_serve->add_option("-p,--port", serve.port, "Port (0 picks a free one)")->capture_default_str();
  s_serve->add_option("--model-dir", serve.model_dir, "Model store directory (default: <data>/models)");
  s_serve->add_option("--static-dir", serve.static_dir, "UI bundle served under /ui/");
  s_serve->add_option("--workers", serve.workers, "Concurrent scoring jobs")->capture_default_str();
  s_serve->add_option("--max-upload-mb", serve.max_upload_mb, "Upload size limit")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*s_synth) return run_synth(common, synth, std::cout);
    if (*s_feat) return run_featurize(common, featurize, std::cout);
    if (*s_train) return run_train(common, training, std::cout);
    if (*s_search) return run_search(common, training, std::cout);
    if (*s_score) return run_score(common, score, std::cout);
    if (*s_eval) return run_eval(common, evaluation, std::cout);
    if (*s_report) return run_report(common, report, std::cout);
    if (*s_serve) return run_serve(common, serve, std::cout);
  } catch (const somnus::Error& e) {
    std::cout.flush();
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cout.flush();
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
