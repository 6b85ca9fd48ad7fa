// SPDX-License-Identifier: Apache-2.0
#include "somnus/score.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "somnus/error.hpp"
#include "somnus/parallel.hpp"

namespace somnus::score {

std::vector<std::size_t> disagreements(const Hypnogram& expert, const Hypnogram& predicted) {
  if (expert.size() != predicted.size()) {
    throw DataError("expert hypnogram has " + std::to_string(expert.size()) + " epochs, prediction has " +
                    std::to_string(predicted.size()));
  }
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < expert.size(); ++t) {
    if (expert[t] != predicted[t]) out.push_back(t);
  }
  return out;
}

ScoreResult score_recording(const train::TrainedModel& m, const Recording& raw, const ScoreOptions& opt,
                            const ChunkCallback& on_chunk) {
  const Recording rec = derive_montage(raw);
  const std::size_t n = epoch_count(rec);
  if (n == 0) throw DataError("recording " + rec.id + ": no complete epochs");
  if (rec.expert_hypnogram && rec.expert_hypnogram->size() != n) {
    throw DataError("recording " + rec.id + ": expert hypnogram has " + std::to_string(rec.expert_hypnogram->size()) +
                    " epochs, signal has " + std::to_string(n));
  }
  const nn::Network net(m.spec);
  const nn::Representation rep = m.spec.representation;
  const std::size_t dim = nn::input_shape_for(rep).size();
  if (dim != m.norm.mean.size()) throw DataError("model " + m.name + " normalization does not match its input");

  train::RecordingData d;
  d.id = rec.id;
  d.representation = rep;
  d.n_epochs = n;
  d.dim = dim;
  d.inputs.resize(n * dim);
  const MultitaperPsd psd(canonical_tapers());

  ScoreResult res;
  res.recording_id = rec.id;
  res.model_name = m.name;
  res.epoch_count = n;
  res.probs.reserve(n);
  for (std::size_t lo = 0; lo < n; lo += kChunkEpochs) {
    const std::size_t hi = std::min(n, lo + kChunkEpochs);
    parallel_for(hi - lo, opt.threads, [&](std::size_t i) {
      const std::size_t e = lo + i;
      train::epoch_input(epoch_channels(rec, e), psd, rep, std::span<double>(d.inputs).subspan(e * dim, dim));
    });
    const auto rows = std::span<double>(d.inputs).subspan(lo * dim, (hi - lo) * dim);
    apply_norm(rows, m.norm);
    std::vector<train::ItemRef> items;
    for (std::size_t t = lo; t < hi; ++t) items.push_back({0, t});
    const nn::Matrix p = net.forward(m.params, train::gather(std::span<const train::RecordingData>(&d, 1), items,
                                                             m.spec.lookback));
    const std::size_t first = res.probs.size();
    for (std::size_t j = 0; j < items.size(); ++j) {
      StageProbs sp{};
      for (std::size_t k = 0; k < kNumStages; ++k) sp[k] = p(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      res.probs.push_back(sp);
    }
    if (on_chunk) on_chunk(lo, std::span<const StageProbs>(res.probs).subspan(first));
  }
  res.predicted = hypnogram_from_probs(res.probs);
  res.margin = margin_of(res.probs);
  res.entropy = entropy_of(res.probs);
  res.report = sleep_stats(res.predicted);
  if (rec.expert_hypnogram) {
    res.expert = rec.expert_hypnogram;
    res.disagreements = disagreements(*res.expert, res.predicted);
  }
  return res;
}

std::string format_epoch_line(std::size_t t, const StageProbs& p) {
  const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", t,
                std::string(stage_symbol(stage_from_index(static_cast<int>(k)))).c_str(), p[k], p[0], p[1], p[2], p[3],
                p[4]);
  return buf;
}

std::string score_document(const ScoreResult& r) {
  nlohmann::json j;
  j["recording_id"] = r.recording_id;
  j["model"] = r.model_name;
  j["epoch_count"] = r.epoch_count;
  std::vector<std::string> stages;
  for (Stage s : r.predicted.stages) stages.emplace_back(stage_symbol(s));
  j["hypnogram"] = stages;
  j["probs"] = r.probs;
  j["confidence"] = r.predicted.confidence.value_or(std::vector<double>{});
  j["margin"] = r.margin;
  j["entropy"] = r.entropy;
  j["report"] = nlohmann::json::parse(sleep_report_json(r.report));
  if (r.expert) {
    std::vector<std::string> ex;
    for (Stage s : r.expert->stages) ex.emplace_back(stage_symbol(s));
    j["expert_hypnogram"] = ex;
    j["disagreements"] = r.disagreements;
  } else {
    j["expert_hypnogram"] = nullptr;
    j["disagreements"] = nullptr;
  }
  return j.dump();
}

}  // namespace somnus::score
