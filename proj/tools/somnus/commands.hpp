// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace somnus::cli {

/// Flags shared by every subcommand. Paths are taken as given; relative
/// defaults resolve against the data directory.
struct Common {
  std::string input;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  std::string preset = "desk";
  unsigned threads = 0;  // 0: all available cores
};

struct SynthArgs {
  std::size_t count = 10;
  std::size_t epochs = 120;
  std::string format = "somn";
  std::string params;
};

struct FeaturizeArgs {
  bool csv = false;
};

struct TrainArgs {
  std::string family = "lstm";
  std::string representation = "expert";
  std::size_t lookback = 0;  // 0: family default
  std::string name;
  std::string features;
  std::vector<double> split = {0.7, 0.1, 0.2};
  double learning_rate = 0.01;
  std::size_t max_epochs = 30;
  std::size_t batch_size = 64;
  std::size_t patience = 5;
  std::size_t budget = 10;  // search only
};

struct ScoreArgs {
  std::string sidecar;
  std::string ids;
  bool quiet = false;
};

struct EvalArgs {
  std::string expert;
  std::string pred;
};

struct ReportArgs {
  bool json = false;
};

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model_dir;
  std::string static_dir;
  unsigned workers = 1;
  std::size_t max_upload_mb = 512;
};

/// $SOMNUS_DATA_DIR, else the current directory.
std::filesystem::path data_dir();

int run_synth(const Common& c, const SynthArgs& a, std::ostream& out);
int run_featurize(const Common& c, const FeaturizeArgs& a, std::ostream& out);
int run_train(const Common& c, const TrainArgs& a, std::ostream& out);
int run_search(const Common& c, const TrainArgs& a, std::ostream& out);
int run_score(const Common& c, const ScoreArgs& a, std::ostream& out);
int run_eval(const Common& c, const EvalArgs& a, std::ostream& out);
int run_report(const Common& c, const ReportArgs& a, std::ostream& out);
int run_serve(const Common& c, const ServeArgs& a, std::ostream& out);

}  // namespace somnus::cli
