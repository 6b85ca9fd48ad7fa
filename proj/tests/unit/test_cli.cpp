// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../support/train_fixtures.hpp"
#include "somnus/container.hpp"
#include "somnus/edf.hpp"

using namespace somnus;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("somnus_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth -o synth -n 10 -e 20 -s 5").code, 0);
    ASSERT_EQ(run("train -i synth -o models --family lr --name lr -s 5 --max-epochs 3").code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  // Runs the binary inside the suite's directory with SOMNUS_DATA_DIR unset.
  static Outcome run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && env -u SOMNUS_DATA_DIR '" SOMNUS_CLI "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpExitsZeroAndListsEveryFlag) {
  const Outcome top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* s : {"synth", "featurize", "train", "search", "score", "eval", "report", "serve"}) {
    EXPECT_NE(top.out.find(s), std::string::npos) << s;
  }
  const Outcome score = run("score --help");
  EXPECT_EQ(score.code, 0);
  for (const char* f : {"--input", "--model", "--seed", "--preset", "--threads", "--out", "--sidecar", "--ids"}) {
    EXPECT_NE(score.out.find(f), std::string::npos) << f;
  }
  const Outcome train = run("train --help");
  for (const char* f : {"--family", "--representation", "--lookback", "--features", "--split"}) {
    EXPECT_NE(train.out.find(f), std::string::npos) << f;
  }
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("score --no-such-flag").code, 1);
  EXPECT_EQ(run("synth --format wav").code, 1);
  EXPECT_EQ(run("train --preset huge").code, 1);
}

TEST_F(CliTest, DataErrorsExitTwo) {
  const Outcome missing = run("score -i synth -m absent");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("absent"), std::string::npos);

  const std::string bytes = slurp(dir_ / "synth" / "synth-000.somn");
  std::ofstream(dir_ / "cut.somn", std::ios::binary) << bytes.substr(0, 200);
  const Outcome cut = run("score -i cut.somn -m models/lr.somd");
  EXPECT_EQ(cut.code, 2);
  EXPECT_NE(cut.err.find("cut.somn"), std::string::npos) << cut.err;
  EXPECT_NE(cut.err.find("byte offset"), std::string::npos) << cut.err;
}

TEST_F(CliTest, ScoreWithoutCompleteEpochs) {
  Recording r = fixtures::synth_recording(9, 1);
  for (auto& c : r.channels) c.samples.resize(5999);
  r.expert_hypnogram.reset();
  write_file((dir_ / "short.somn").string(), write_container(r));
  const Outcome res = run("score -i short.somn -m models/lr.somd");
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.err.find("no complete epochs"), std::string::npos) << res.err;
}

TEST_F(CliTest, EvalOfIdenticalSidecarsHasKappaOne) {
  const Outcome res = run("eval --expert synth/synth-001.hyp --pred synth/synth-001.hyp");
  EXPECT_EQ(res.code, 0) << res.err;
  EXPECT_NE(res.out.find("\nkappa 1.000000\n"), std::string::npos) << res.out;
  EXPECT_NE(res.out.find("\naccuracy 1.000000\n"), std::string::npos);
}

TEST_F(CliTest, SeedIsEchoed) {
  EXPECT_EQ(run("synth -o s2 -n 1 -e 2 -s 1234").out.rfind("# seed=1234\n", 0), 0u);
  EXPECT_EQ(run("report -i synth/synth-000.hyp").out.rfind("# seed=0\n", 0), 0u);
}

TEST_F(CliTest, RerunsOverwriteIdentically) {
  ASSERT_EQ(run("synth -o again -n 10 -e 20 -s 5").code, 0);
  for (const char* f : {"synth-000.somn", "synth-001.hyp", "manifest.tsv"}) {
    EXPECT_EQ(slurp(dir_ / "again" / f), slurp(dir_ / "synth" / f)) << f;
  }
  ASSERT_EQ(run("train -i synth -o models --family lr --name lr2 -s 5 --max-epochs 3 -j 1").code, 0);
  const std::string a = slurp(dir_ / "models" / "lr2.somd");
  ASSERT_EQ(run("train -i synth -o models --family lr --name lr2 -s 5 --max-epochs 3 -j 2").code, 0);
  EXPECT_EQ(slurp(dir_ / "models" / "lr2.somd"), a);
}

TEST_F(CliTest, FeatureFilesFeedTraining) {
  ASSERT_EQ(run("featurize -i synth -o feats --csv").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "feats" / "synth-000.somf"));
  EXPECT_TRUE(fs::exists(dir_ / "feats" / "synth-000.soms"));
  EXPECT_TRUE(fs::exists(dir_ / "feats" / "synth-000.features.csv"));
  ASSERT_EQ(run("train -i synth --features feats -o fm --family lr --name lr -s 5 --max-epochs 3").code, 0);
  EXPECT_EQ(slurp(dir_ / "fm" / "lr.somd"), slurp(dir_ / "models" / "lr.somd"));
}

TEST_F(CliTest, ScoreStreamsAndWritesArtifacts) {
  const Outcome res = run("score -i synth --ids models/lr.test-ids -m lr -o pred");
  // A bare model name resolves against $SOMNUS_DATA_DIR/models, here the cwd.
  EXPECT_EQ(res.code, 0) << res.err;
  const std::string ids = slurp(dir_ / "models" / "lr.test-ids");
  const std::string first = ids.substr(0, ids.find('\n'));
  EXPECT_NE(res.out.find("# recording=" + first + "\nepoch\tstage\tconfidence"), std::string::npos) << res.out;
  EXPECT_TRUE(fs::exists(dir_ / "pred" / (first + ".hyp")));
  EXPECT_TRUE(fs::exists(dir_ / "pred" / (first + ".score.json")));
  std::size_t lines = 0;
  std::istringstream is(res.out);
  for (std::string l; std::getline(is, l);) lines += (!l.empty() && std::isdigit(static_cast<unsigned char>(l[0]))) ? 1 : 0;
  EXPECT_EQ(lines, 40u);  // two held-out recordings of 20 epochs

  const Outcome ev = run("eval --expert synth --pred pred -o metrics.txt");
  EXPECT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(ev.out, "# seed=0\n" + slurp(dir_ / "metrics.txt"));
  EXPECT_NE(ev.out.find("recordings 2"), std::string::npos);

  const Outcome rep = run("report -i pred/" + first + ".hyp --json");
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.out.find("\"sleep_efficiency\""), std::string::npos);
}
