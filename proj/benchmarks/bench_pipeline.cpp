// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "somnus/features.hpp"
#include "somnus/nn.hpp"
#include "somnus/spectral.hpp"
#include "somnus/synthgen.hpp"
#include "somnus/train.hpp"

using namespace somnus;

namespace {

const Recording& fixture() {
  static const Recording r = [] {
    const SynthParams p;
    return gen_recording(gen_hypnogram(3, 8, p.transitions), 3, p.signatures, p.jitter);
  }();
  return r;
}

void BM_MultitaperWindow(benchmark::State& state) {
  const MultitaperPsd psd(canonical_tapers());
  Rng rng(1);
  std::vector<double> x(kWindowSamples), out(kFreqBins);
  for (double& v : x) v = rng.normal();
  for (auto _ : state) {
    psd.estimate(x, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_MultitaperWindow);

void BM_SpectrogramEpoch(benchmark::State& state) {
  const MultitaperPsd psd(canonical_tapers());
  const auto ch = epoch_channels(fixture(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(spectrogram_epoch(ch, psd));
}
BENCHMARK(BM_SpectrogramEpoch)->Unit(benchmark::kMillisecond);

void BM_ExpertFeaturesEpoch(benchmark::State& state) {
  const MultitaperPsd psd(canonical_tapers());
  const auto ch = epoch_channels(fixture(), 1);
  const auto spec = spectrogram_epoch(ch, psd);
  for (auto _ : state) benchmark::DoNotOptimize(expert_features(ch, spec.pairs));
}
BENCHMARK(BM_ExpertFeaturesEpoch);

// Batched inference of a desk-sized LSTM over expert inputs; range is the batch size.
void BM_LstmForward(benchmark::State& state) {
  const auto spec = nn::preset_spec(nn::Preset::Desk, nn::Family::LSTM, nn::Representation::Expert, 10);
  const nn::Network net(spec);
  const nn::ParamSet ps = net.init_params(1);
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(2);
  nn::Batch b;
  b.steps = spec.lookback;
  for (std::size_t s = 0; s < spec.lookback; ++s) {
    nn::Matrix x(static_cast<Eigen::Index>(spec.input.size()), n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    b.x.push_back(std::move(x));
  }
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(ps, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LstmForward)->Arg(1)->Arg(32)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
