// SPDX-License-Identifier: Apache-2.0
// Acceptance suite. Prints indented detail lines and then exactly one
// "PASS <id>: ..." or "FAIL <id>: ..." line per criterion; exits 1 if any fail.
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include "../support/nn_fixtures.hpp"
#include "somnus/container.hpp"
#include "somnus/edf.hpp"
#include "somnus/eval.hpp"
#include "somnus/features.hpp"
#include "somnus/parallel.hpp"
#include "somnus/report.hpp"
#include "somnus/score.hpp"
#include "somnus/spectral.hpp"
#include "somnus/store.hpp"
#include "somnus/synthgen.hpp"
#include "somnus/train.hpp"

using namespace somnus;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

// --- pinned tolerances and budgets -------------------------------------------

constexpr double kShapesBudgetS = 1.0;

constexpr double kGramTol = 1e-8;
constexpr double kEigenMin = 0.99;
constexpr double kEigenOracleTol = 1e-8;
constexpr std::size_t kPeakBinTol = 1;
constexpr std::size_t kNoiseWindows = 1000;
constexpr double kFlatnessTol = 0.10;
constexpr std::size_t kFlatFirstBin = 5;   // bins within the 1.5 Hz taper bandwidth of DC and
constexpr std::size_t kFlatLastBin = 251;  // Nyquist are excluded (mean removal, folding)
constexpr double kScalingTol = 1e-12;
constexpr double kSpectralBudgetS = 30.0;

constexpr double kGradH = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr std::uint64_t kGradSeeds[] = {1, 2, 3};
constexpr double kGradBudgetS = 300.0;

constexpr double kKappaFixture = 0.4;
constexpr double kKappaFixtureTol = 1e-12;
constexpr std::size_t kRandomEpochs = 100000;
constexpr double kRandomKappaTol = 0.02;
constexpr double kRowSumTol = 1e-9;

constexpr std::size_t kSuiteEpochs = 120;  // one hour
constexpr std::size_t kSuiteTrain = 60, kSuiteVal = 10, kSuiteTest = 20;
constexpr std::uint64_t kSuiteTrainBase = 1, kSuiteValBase = 2, kSuiteTestBase = 3;
constexpr std::uint64_t kEndToEndSeed = 7;
constexpr std::size_t kEndToEndLookback = 10;
constexpr double kEndToEndKappaMin = 0.70;
constexpr double kEndToEndBudgetS = 900.0;

constexpr std::uint64_t kLookbackSeeds[] = {1, 2, 3};
constexpr std::size_t kLookbacks[] = {1, 3, 10};
constexpr double kLookbackAllowance = -0.01;
constexpr double kLookbackBudgetS = 1800.0;

constexpr std::size_t kNightEpochs = 960;  // eight hours
constexpr std::uint64_t kNightSeed = 8888;
constexpr double kTimingBudgetS = 300.0;

const char* kGoldenName = "desk_pipeline_metrics.txt";

// --- plumbing -------------------------------------------------------------------

struct Verdict {
  bool pass = false;
  std::string summary;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void detail(const std::string& s) { std::cout << "  " << s << '\n' << std::flush; }

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Options {
  std::string cli = SOMNUS_CLI;
  fs::path golden_dir = SOMNUS_GOLDEN_DIR;
  bool write_golden = false;
  std::vector<std::string> only;
};

// Shared synthetic suite and the end-to-end models, built on first use.
struct Suite {
  std::vector<train::RecordingData> train, val, test;
};

class Context {
 public:
  const Suite& suite() {
    if (!suite_) {
      const auto t0 = clk::now();
      suite_.emplace();
      suite_->train = make(kSuiteTrainBase, kSuiteTrain);
      suite_->val = make(kSuiteValBase, kSuiteVal);
      suite_->test = make(kSuiteTestBase, kSuiteTest);
      detail(fmt("synthetic suite: %zu/%zu/%zu recordings x %zu epochs generated and featurized in %.1f s", kSuiteTrain,
                 kSuiteVal, kSuiteTest, kSuiteEpochs, seconds_since(t0)));
      suite_seconds_ = seconds_since(t0);
    }
    return *suite_;
  }
  double suite_seconds() const { return suite_seconds_; }

  const train::TrainedModel& lstm() {
    if (!lstm_) lstm_ = fit_expert(nn::Family::LSTM, kEndToEndLookback, kEndToEndSeed);
    return *lstm_;
  }
  const train::TrainedModel& lr() {
    if (!lr_) lr_ = fit_expert(nn::Family::LR, 1, kEndToEndSeed);
    return *lr_;
  }

  train::TrainedModel fit_expert(nn::Family f, std::size_t lookback, std::uint64_t seed) {
    const auto& s = suite();
    const auto spec = nn::preset_spec(nn::Preset::Desk, f, nn::Representation::Expert, lookback);
    train::TrainConfig c;
    c.seed = seed;
    c.threads = default_threads();
    return train::fit(spec, s.train, s.val, c);
  }

  eval::MetricsReport test_metrics(const train::TrainedModel& m) {
    std::vector<eval::LabelledPair> pairs;
    for (const auto& d : suite().test) {
      eval::LabelledPair p;
      p.id = d.id;
      for (int l : d.labels) p.expert.stages.push_back(stage_from_index(l));
      p.predicted = hypnogram_from_probs(train::predict(m, d, default_threads()));
      pairs.push_back(std::move(p));
    }
    return eval::evaluate(pairs);
  }

 private:
  static std::vector<train::RecordingData> make(std::uint64_t base, std::size_t n) {
    const SynthParams p;
    std::vector<train::RecordingData> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t seed = Rng::mix(base, i);
      Recording r = gen_recording(gen_hypnogram(seed, kSuiteEpochs, p.transitions), seed, p.signatures, p.jitter,
                                  default_threads());
      r.id = fmt("suite%llu-%03zu", static_cast<unsigned long long>(base), i);
      out.push_back(train::recording_inputs(r, nn::Representation::Expert, default_threads()));
    }
    return out;
  }

  std::optional<Suite> suite_;
  double suite_seconds_ = 0.0;
  std::optional<train::TrainedModel> lstm_, lr_;
};

// --- criteria -------------------------------------------------------------

Verdict shapes(Context&, const Options&) {
  const auto t0 = clk::now();
  bool ok = true;
  const auto cats = expert_feature_categories();
  std::size_t total = 0;
  std::string layout;
  for (const auto& c : cats) {
    total += c.count;
    layout += (layout.empty() ? "" : "/") + std::to_string(c.count);
  }
  const bool cat_ok = cats.size() == 12 && cats[0].count == 6 && cats[1].count == 6 &&
                      std::all_of(cats.begin() + 2, cats.begin() + 8, [](const auto& c) { return c.count == 12; }) &&
                      std::all_of(cats.begin() + 8, cats.end(), [](const auto& c) { return c.count == 3; });
  ok &= cat_ok && total == kNumExpertFeatures && expert_feature_names().size() == 96;
  detail(fmt("expert feature categories %s, total %zu", layout.c_str(), total));

  const Recording r = [] {
    const SynthParams p;
    return gen_recording(gen_hypnogram(5, 2, p.transitions), 5, p.signatures, p.jitter);
  }();
  const MultitaperPsd psd(canonical_tapers());
  const EpochSpectrogram spec = spectrogram_epoch(epoch_channels(r, 0), psd);
  const auto fv = expert_features(epoch_channels(r, 0), spec.pairs);
  const RecordingFeatures rf = extract_features(r);
  const RawEpochTensor raw = raw_tensor(r);
  const std::size_t grid = spec.average.values.size();
  ok &= fv.size() == 96 && rf.expert.values.size() == 2 * 96;
  ok &= grid == 29 * 257 && rf.average.values.size() == 2 * 29 * 257;
  ok &= raw.n_epochs == 2 && raw.values.size() == 2 * 6000 * 6;
  bool raw_layout = true;
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t t : {std::size_t{0}, std::size_t{2999}, std::size_t{5999}}) {
      raw_layout &= raw.at(1, t, c) == r.channels[c].samples[6000 + t];
    }
  }
  ok &= raw_layout;
  detail(fmt("feature vector %zu; spectrogram %zu x %zu (%zu values); raw epoch %zu x %zu (layout %s)", fv.size(),
             kSubEpochs, kFreqBins, grid, kEpochSamples, kNumDerivedChannels, raw_layout ? "ok" : "wrong"));
  const std::size_t n = epoch_count(6'000'000);
  ok &= n == 1000;
  const double s = seconds_since(t0);
  ok &= s < kShapesBudgetS;
  return {ok, fmt("96 = %s, 29x257, 6000x6, epoch_count(6e6) = %zu, %.2f s (< %.0f s)", layout.c_str(), n, s,
                  kShapesBudgetS)};
}

Verdict spectral(Context&, const Options&) {
  const auto t0 = clk::now();
  const double pi = std::numbers::pi;
  const TaperBank bank = dpss(400, 3.0, 5);

  double gram = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < 400; ++t) dot += bank.tapers[i][t] * bank.tapers[j][t];
      gram = std::max(gram, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  const bool gram_ok = gram < kGramTol;
  detail(fmt("Gram deviation %.2e (< %.0e): %s", gram, kGramTol, gram_ok ? "ok" : "FAIL"));

  // Dense oracle: eigenvalues of the sinc concentration matrix.
  const double w = 3.0 / 400.0;
  Eigen::MatrixXd a(400, 400);
  for (Eigen::Index i = 0; i < 400; ++i) {
    for (Eigen::Index j = 0; j < 400; ++j) {
      const double d = static_cast<double>(i - j);
      a(i, j) = i == j ? 2.0 * w : std::sin(2.0 * pi * w * d) / (pi * d);
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  bool eig_match = true, eig_min = true;
  std::string eigs;
  for (std::size_t k = 0; k < 5; ++k) {
    const double oracle = es.eigenvalues()(399 - static_cast<Eigen::Index>(k));
    eig_match &= std::abs(bank.eigenvalues[k] - oracle) < kEigenOracleTol;
    eig_min &= bank.eigenvalues[k] > kEigenMin;
    eigs += fmt("%s%.8f", k ? " " : "", bank.eigenvalues[k]);
  }
  detail(fmt("eigenvalues [%s]; oracle agreement < %.0e: %s; all > %.2f: %s", eigs.c_str(), kEigenOracleTol,
             eig_match ? "ok" : "FAIL", kEigenMin, eig_min ? "ok" : "FAIL"));

  const MultitaperPsd psd(bank);
  const std::size_t nearest = static_cast<std::size_t>(std::lround(10.0 / kBinHz));
  bool peak_ok = true;
  std::size_t worst_peak = nearest;
  double centroid = 0.0;
  for (int ph = 0; ph < 8; ++ph) {
    std::vector<double> x(400);
    for (std::size_t t = 0; t < 400; ++t) x[t] = std::sin(2 * pi * 10.0 * static_cast<double>(t) / 200.0 + ph * pi / 4);
    const auto s = psd.estimate(x);
    const auto peak = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    const std::size_t dist = peak > nearest ? peak - nearest : nearest - peak;
    peak_ok &= dist <= kPeakBinTol;
    if (dist >= (worst_peak > nearest ? worst_peak - nearest : nearest - worst_peak)) worst_peak = peak;
    if (ph == 0) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (std::abs(bin_frequency(k) - 10.0) > 3.0) continue;
        num += s[k] * bin_frequency(k);
        den += s[k];
      }
      centroid = num / den;
    }
  }
  detail(fmt("10 Hz tone, 8 phases: argmax bin %zu (%.3f Hz), nearest bin to 10 Hz is %zu, tolerance %zu bin; "
             "plateau centroid %.3f Hz: %s",
             worst_peak, bin_frequency(worst_peak), nearest, kPeakBinTol, centroid, peak_ok ? "ok" : "FAIL"));

  Rng rng(42);
  std::vector<double> acc(kFreqBins, 0.0), x(400), out(kFreqBins);
  for (std::size_t win = 0; win < kNoiseWindows; ++win) {
    for (double& v : x) v = rng.normal();
    psd.estimate(x, out);
    for (std::size_t k = 0; k < kFreqBins; ++k) acc[k] += out[k] / static_cast<double>(kNoiseWindows);
  }
  const double level = 2.0 / kCanonicalRateHz;
  double flat = 0.0;
  for (std::size_t k = kFlatFirstBin; k <= kFlatLastBin; ++k) flat = std::max(flat, std::abs(acc[k] / level - 1.0));
  const bool flat_ok = flat <= kFlatnessTol;
  detail(fmt("white noise, %zu windows, bins %zu..%zu: max deviation %.3f from 2/fs (<= %.2f): %s", kNoiseWindows,
             kFlatFirstBin, kFlatLastBin, flat, kFlatnessTol, flat_ok ? "ok" : "FAIL"));

  std::vector<double> y(400);
  for (double& v : y) v = rng.normal();
  const auto s1 = psd.estimate(y);
  const double amp = 3.7;
  for (double& v : y) v *= amp;
  const auto s2 = psd.estimate(y);
  double scale = 0.0;
  for (std::size_t k = 0; k < kFreqBins; ++k) {
    if (s1[k] > 0.0) scale = std::max(scale, std::abs(s2[k] / (amp * amp * s1[k]) - 1.0));
  }
  const bool scale_ok = scale < kScalingTol;
  detail(fmt("amplitude %.1f: max relative deviation from a^2 %.2e (< %.0e): %s", amp, scale, kScalingTol,
             scale_ok ? "ok" : "FAIL"));

  const double s = seconds_since(t0);
  const bool time_ok = s < kSpectralBudgetS;
  const bool ok = gram_ok && eig_match && eig_min && peak_ok && flat_ok && scale_ok && time_ok;
  std::string failed;
  if (!gram_ok) failed += " gram";
  if (!eig_match) failed += " eigen-oracle";
  if (!eig_min) failed += fmt(" eigenvalue>%.2f (min %.6f)", kEigenMin, bank.eigenvalues[4]);
  if (!peak_ok) failed += " peak";
  if (!flat_ok) failed += " flatness";
  if (!scale_ok) failed += " scaling";
  if (!time_ok) failed += " runtime";
  return {ok, fmt("%s%s, %.1f s (< %.0f s)", ok ? "all sub-checks" : "failed:", failed.c_str(), s, kSpectralBudgetS)};
}

// One-sided slopes at the worst parameter of a failed check. When they disagree
// with each other and one of them matches the analytic value, the loss has a
// switch point (ReLU or pooling argmax) inside [-h, h]; otherwise the backward
// pass itself is suspect.
void kink_diagnostic(const nn::Network& net, const nn::ParamSet& ps, const nn::Batch& b,
                     const nn::GradCheckReport& rep) {
  const nn::ForwardOptions opt{nn::Mode::Training, 7, false};
  const auto it = std::find(ps.names.begin(), ps.names.end(), rep.worst_param);
  if (it == ps.names.end()) return;
  nn::ParamSet q = ps;
  double& w = q[static_cast<std::size_t>(it - ps.names.begin())].data[rep.worst_index];
  const double w0 = w;
  const double f0 = net.loss_and_grad(q, b, opt).loss;
  w = w0 + kGradH;
  const double fp = net.loss_and_grad(q, b, opt).loss;
  w = w0 - kGradH;
  const double fm = net.loss_and_grad(q, b, opt).loss;
  detail(fmt("  %s[%zu]: analytic %.9g, forward slope %.9g, backward slope %.9g", rep.worst_param.c_str(),
             rep.worst_index, rep.analytic, (fp - f0) / kGradH, (f0 - fm) / kGradH));
}

Verdict gradients(Context&, const Options&) {
  const auto t0 = clk::now();
  bool ok = true;
  double worst = 0.0;
  for (const auto& c : fixtures::gradcheck_cases()) {
    double family_worst = 0.0;
    std::string where;
    const nn::Network net(c.spec);
    std::vector<std::function<void()>> diagnostics;
    for (std::uint64_t seed : kGradSeeds) {
      const nn::ParamSet ps = net.init_params(seed);
      const nn::Batch b = fixtures::random_batch(c.spec, c.batch, 100 + seed);
      const auto rep = nn::gradient_check(net, ps, b, kGradH);
      ok &= rep.checked == ps.scalar_count();
      if (rep.max_rel_error >= kGradTol) diagnostics.push_back([&net, ps, b, rep] { kink_diagnostic(net, ps, b, rep); });
      if (rep.max_rel_error >= family_worst) {
        family_worst = rep.max_rel_error;
        where = fmt("seed %llu %s[%zu]", static_cast<unsigned long long>(seed), rep.worst_param.c_str(), rep.worst_index);
      }
    }
    ok &= family_worst < kGradTol;
    worst = std::max(worst, family_worst);
    detail(fmt("%-6s max relative error %.2e at %s", c.name.c_str(), family_worst, where.c_str()));
    for (const auto& d : diagnostics) d();
  }
  const double s = seconds_since(t0);
  ok &= s < kGradBudgetS;
  return {ok, fmt("6 families x seeds {1,2,3}: worst %.2e (< %.0e), h = %.0e, %.1f s (< %.0f s)", worst, kGradTol, kGradH,
                  s, kGradBudgetS)};
}

Verdict metrics(Context&, const Options&) {
  std::vector<int> e, p;
  auto add = [&](int a, int b, int n) {
    for (int i = 0; i < n; ++i) {
      e.push_back(a);
      p.push_back(b);
    }
  };
  add(0, 0, 40);
  add(0, 1, 10);
  add(1, 0, 20);
  add(1, 1, 30);
  const auto cm = eval::confusion(e, p);
  const double k = eval::kappa(cm).kappa;
  const double acc = eval::accuracy(cm);
  const bool fixture_ok = std::abs(k - kKappaFixture) < kKappaFixtureTol && acc == 0.70;
  detail(fmt("[[40,10],[20,30]]: kappa %.12f, accuracy %.12f", k, acc));

  std::vector<int> all(e);
  const double perfect = eval::kappa(eval::confusion(all, all)).kappa;
  const bool perfect_ok = perfect == 1.0;
  detail(fmt("perfect agreement: kappa %.12f", perfect));

  const double marg[5] = {0.3, 0.1, 0.35, 0.1, 0.15};
  Rng rng(2024);
  auto draw = [&] {
    double u = rng.uniform(), c = 0.0;
    for (int i = 0; i < 5; ++i) {
      c += marg[i];
      if (u < c) return i;
    }
    return 4;
  };
  std::vector<int> re, rp;
  for (std::size_t i = 0; i < kRandomEpochs; ++i) {
    re.push_back(draw());
    rp.push_back(draw());
  }
  const auto rcm = eval::confusion(re, rp);
  const double rk = eval::kappa(rcm).kappa;
  const bool random_ok = std::abs(rk) <= kRandomKappaTol;
  detail(fmt("matched-marginal random prediction over %zu epochs: kappa %+.4f", kRandomEpochs, rk));

  double row_dev = 0.0;
  for (const auto* m : {&cm, &rcm}) {
    const auto nc = eval::normalize_rows(*m);
    for (std::size_t r = 0; r < kNumStages; ++r) {
      double sum = 0.0;
      bool any = false;
      for (std::size_t c = 0; c < kNumStages; ++c) {
        sum += nc.rows[r][c];
        any |= m->counts[r][c] > 0;
      }
      if (any) row_dev = std::max(row_dev, std::abs(sum - 1.0));
    }
  }
  const bool rows_ok = row_dev <= kRowSumTol;
  detail(fmt("normalized confusion rows: max |sum - 1| %.2e", row_dev));
  return {fixture_ok && perfect_ok && random_ok && rows_ok,
          fmt("kappa %.4f acc %.2f; perfect %.1f; random %+.4f (|.| <= %.2f); rows %.1e (<= %.0e)", k, acc, perfect, rk,
              kRandomKappaTol, row_dev, kRowSumTol)};
}

Verdict end_to_end(Context& ctx, const Options&) {
  const auto t0 = clk::now();
  ctx.suite();
  const auto& lstm = ctx.lstm();
  const auto& lr = ctx.lr();
  const auto ml = ctx.test_metrics(lstm);
  const auto mr = ctx.test_metrics(lr);
  detail(fmt("LSTM(expert, lookback %zu, desk, seed %llu): test kappa %.4f, accuracy %.4f, %zu steps", kEndToEndLookback,
             static_cast<unsigned long long>(kEndToEndSeed), ml.kappa.kappa, ml.accuracy, lstm.history.steps));
  detail(fmt("LR(expert, desk, seed %llu): test kappa %.4f, accuracy %.4f", static_cast<unsigned long long>(kEndToEndSeed),
             mr.kappa.kappa, mr.accuracy));
  const double s = seconds_since(t0);
  const bool ok = ml.kappa.kappa >= kEndToEndKappaMin && ml.kappa.kappa > mr.kappa.kappa && s < kEndToEndBudgetS;
  return {ok, fmt("LSTM kappa %.4f (>= %.2f) vs LR %.4f (must be lower), %.0f s (< %.0f s)", ml.kappa.kappa,
                  kEndToEndKappaMin, mr.kappa.kappa, s, kEndToEndBudgetS)};
}

Verdict lookback(Context& ctx, const Options&) {
  const auto t0 = clk::now();
  ctx.suite();
  std::vector<double> mean;
  for (std::size_t L : kLookbacks) {
    double sum = 0.0;
    std::string per;
    for (std::uint64_t seed : kLookbackSeeds) {
      const double k = ctx.test_metrics(ctx.fit_expert(nn::Family::LSTM, L, seed)).kappa.kappa;
      sum += k;
      per += fmt(" %.4f", k);
    }
    mean.push_back(sum / static_cast<double>(std::size(kLookbackSeeds)));
    detail(fmt("lookback %2zu: test kappa per seed%s, mean %.4f", L, per.c_str(), mean.back()));
  }
  bool ok = true;
  std::string steps;
  for (std::size_t i = 1; i < mean.size(); ++i) {
    const double d = mean[i] - mean[i - 1];
    ok &= d >= kLookbackAllowance;
    steps += fmt("%s%zu->%zu %+.4f", i > 1 ? ", " : "", kLookbacks[i - 1], kLookbacks[i], d);
  }
  const double s = seconds_since(t0);
  ok &= s < kLookbackBudgetS;
  return {ok, fmt("mean kappa %.4f / %.4f / %.4f; %s (each >= %.2f), %.0f s (< %.0f s)", mean[0], mean[1], mean[2],
                  steps.c_str(), kLookbackAllowance, s, kLookbackBudgetS)};
}

// The desk pipeline through the CLI, in a scratch directory.
std::optional<std::string> run_golden_pipeline(const Options& o, std::string& log) {
  const fs::path dir = fs::temp_directory_path() / ("somnus_golden_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<std::string> steps = {
      "synth -o synth -n 12 -e 60 -s 42",
      "featurize -i synth -o features -s 42",
      "train -i synth --features features -o models --family lstm --lookback 3 --name golden -s 42 --max-epochs 8",
      "score -i synth --ids models/golden.test-ids -m models/golden.somd -o pred -q -s 42",
      "eval --expert synth --pred pred -o metrics.txt -s 42",
  };
  for (const auto& step : steps) {
    const std::string cmd =
        "cd '" + dir.string() + "' && env -u SOMNUS_DATA_DIR '" + o.cli + "' " + step + " >>log.txt 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      log = "step failed: somnus " + step + "\n" + slurp(dir / "log.txt");
      return std::nullopt;
    }
  }
  std::string metrics = slurp(dir / "metrics.txt");
  fs::remove_all(dir);
  return metrics;
}

Verdict determinism(Context& ctx, const Options& o) {
  bool ok = true;
  std::string summary;

  std::string log;
  const auto metrics = run_golden_pipeline(o, log);
  const fs::path golden = o.golden_dir / kGoldenName;
  if (!metrics) {
    detail(log);
    ok = false;
    summary += "pipeline failed";
  } else if (o.write_golden) {
    std::ofstream(golden, std::ios::binary | std::ios::trunc) << *metrics;
    detail("wrote " + golden.string());
    summary += "golden written";
  } else {
    const std::string want = slurp(golden);
    const bool same = !want.empty() && want == *metrics;
    ok &= same;
    detail(fmt("golden metrics %s: %s (%zu bytes)", golden.string().c_str(), same ? "byte-identical" : "DIFFERENT",
               metrics->size()));
    if (!same) detail("got:\n" + *metrics);
    summary += same ? "golden byte-identical" : "golden differs";
  }

  const auto& m = ctx.lstm();
  const auto bytes = store::save_model(m);
  const auto back = store::load_model(bytes);
  const bool bytes_same = store::save_model(back) == bytes;
  bool probs_same = true;
  for (const auto& d : ctx.suite().test) {
    const auto a = train::predict(m, d);
    const auto b = train::predict(back, d);
    probs_same &= a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(StageProbs)) == 0;
  }
  ok &= bytes_same && probs_same;
  detail(fmt("model round trip: %zu bytes, re-save %s, test-set probabilities %s", bytes.size(),
             bytes_same ? "identical" : "DIFFERENT", probs_same ? "bit-identical" : "DIFFERENT"));
  summary += fmt("; model round trip %s", bytes_same && probs_same ? "bit-exact" : "differs");

  const SynthParams p;
  const Recording r = gen_recording(gen_hypnogram(77, 4, p.transitions), 77, p.signatures, p.jitter);
  const Bytes edf = write_edf(r);
  const Recording parsed = parse_edf(edf, r.id);
  const Bytes again = write_edf(parsed);
  const Recording reparsed = parse_edf(again, r.id);
  bool samples_same = parsed.channels.size() == reparsed.channels.size();
  for (std::size_t c = 0; samples_same && c < parsed.channels.size(); ++c) {
    const auto& x = parsed.channels[c].samples;
    const auto& y = reparsed.channels[c].samples;
    samples_same = x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
  }
  const bool edf_ok = again == edf && samples_same;
  ok &= edf_ok;
  detail(fmt("EDF: %zu bytes, write(parse(bytes)) %s, samples %s", edf.size(), again == edf ? "identical" : "DIFFERENT",
             samples_same ? "bit-identical" : "DIFFERENT"));
  summary += fmt("; EDF round trip %s", edf_ok ? "bit-exact" : "differs");
  return {ok, summary};
}

Verdict sleep_statistics(Context&, const Options&) {
  Hypnogram h;
  for (int i = 0; i < 100; ++i) {
    const Stage s = i < 10 || i >= 90 ? Stage::W : kAllStages[1 + static_cast<std::size_t>(i) % 4];
    h.stages.push_back(s);
  }
  const SleepReport r = sleep_stats(h);
  const bool eff_ok = r.sleep_efficiency == 0.8;
  detail(fmt("80 sleep epochs of 100: efficiency %.17g", r.sleep_efficiency));

  bool sum_ok = true;
  double worst = 0.0;
  const SynthParams p;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const Hypnogram g = gen_hypnogram(seed, 1 + static_cast<std::size_t>(seed * 7 % 1000), p.transitions);
    const SleepReport q = sleep_stats(g);
    double sum = 0.0;
    for (const auto& [stage, minutes] : q.minutes_per_stage) sum += minutes;
    worst = std::max(worst, std::abs(sum - q.total_recording_min));
    sum_ok &= sum == q.total_recording_min && q.total_recording_min == 0.5 * static_cast<double>(g.size());
  }
  detail(fmt("minutes per stage vs recording length over 200 generated hypnograms: max difference %.1e", worst));
  return {eff_ok && sum_ok, fmt("efficiency %.17g (== 0.8); stage minutes sum exactly to recording length: %s",
                                r.sleep_efficiency, sum_ok ? "yes" : "no")};
}

Verdict timing(Context& ctx, const Options&) {
  const auto& m = ctx.lstm();
  const SynthParams p;
  Recording night = gen_recording(gen_hypnogram(kNightSeed, kNightEpochs, p.transitions), kNightSeed, p.signatures,
                                  p.jitter, default_threads());
  night.id = "night";
  const fs::path file = fs::temp_directory_path() / ("somnus_night_" + std::to_string(::getpid()) + ".edf");
  write_file(file.string(), write_edf(night));

  const auto t0 = clk::now();
  const Recording r = load_recording(file.string());
  const auto res = score::score_recording(m, r, {default_threads()});
  const std::string doc = sleep_report_json(res.report);
  const double s = seconds_since(t0);
  fs::remove(file);
  detail(fmt("8 h EDF (%zu epochs) -> montage -> features -> LSTM(lookback %zu) -> report: %.1f s on %u thread(s); "
             "efficiency %.4f",
             res.epoch_count, m.spec.lookback, s, default_threads(), res.report.sleep_efficiency));
  const bool ok = res.epoch_count == kNightEpochs && !doc.empty() && s < kTimingBudgetS;
  return {ok, fmt("%zu epochs scored end to end in %.1f s (< %.0f s)", res.epoch_count, s, kTimingBudgetS)};
}

struct Criterion {
  const char* id;
  std::function<Verdict(Context&, const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Acceptance suite"};
  app.add_option("--cli", o.cli, "somnus binary used for the pipeline check");
  app.add_option("--golden-dir", o.golden_dir, "Directory holding the golden metrics file");
  app.add_flag("--write-golden", o.write_golden, "Regenerate the golden metrics file instead of comparing");
  app.add_option("--only", o.only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {"shapes", shapes},
      {"spectral", spectral},
      {"gradients", gradients},
      {"metrics", metrics},
      {"end-to-end", end_to_end},
      {"lookback", lookback},
      {"determinism", determinism},
      {"sleep-stats", sleep_statistics},
      {"timing", timing},
  };

  Context ctx;
  std::size_t run = 0, passed = 0;
  for (const auto& c : criteria) {
    if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), c.id) == o.only.end()) continue;
    ++run;
    Verdict v;
    try {
      v = c.run(ctx, o);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    passed += v.pass ? 1 : 0;
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.id << ": " << v.summary << '\n' << std::flush;
  }
  std::cout << "acceptance: " << passed << "/" << run << " criteria pass\n";
  return passed == run ? 0 : 1;
}
