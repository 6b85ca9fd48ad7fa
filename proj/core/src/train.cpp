// SPDX-License-Identifier: Apache-2.0
#include "somnus/train.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>

#include "json_io.hpp"
#include "somnus/error.hpp"
#include "somnus/parallel.hpp"

namespace somnus::train {

using nn::Representation;

void epoch_input(const EpochChannels& ch, const MultitaperPsd& psd, Representation rep, std::span<double> out) {
  const std::size_t want = nn::input_shape_for(rep).size();
  if (out.size() != want) throw ShapeError("epoch_input: output has " + std::to_string(out.size()) + " slots, need " + std::to_string(want));
  switch (rep) {
    case Representation::Expert: {
      const EpochSpectrogram spec = spectrogram_epoch(ch, psd);
      // Rounded through f32 like the feature file, so training from exported
      // features and from recordings sees identical inputs.
      const auto f = expert_features(ch, spec.pairs);
      std::transform(f.begin(), f.end(), out.begin(), [](double v) { return static_cast<double>(static_cast<float>(v)); });
      break;
    }
    case Representation::Spectrogram: {
      const EpochSpectrogram spec = spectrogram_epoch(ch, psd);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_db(static_cast<float>(spec.average.values[i]));
      break;
    }
    case Representation::Raw: {
      for (std::size_t t = 0; t < kEpochSamples; ++t) {
        double s = 0.0;
        for (const auto& c : ch) s += c[t];
        out[t] = s / static_cast<double>(kNumDerivedChannels);
      }
      break;
    }
  }
}

RecordingData recording_inputs(const Recording& r, Representation rep, unsigned threads) {
  if (r.sample_rate_hz() != kCanonicalRateHz) throw DataError("recording " + r.id + " must be at 200 Hz");
  RecordingData d;
  d.id = r.id;
  d.representation = rep;
  d.n_epochs = epoch_count(r);
  d.dim = nn::input_shape_for(rep).size();
  d.inputs.resize(d.n_epochs * d.dim);
  const MultitaperPsd psd(canonical_tapers());
  parallel_for(d.n_epochs, threads, [&](std::size_t e) {
    epoch_input(epoch_channels(r, e), psd, rep, std::span<double>(d.inputs).subspan(e * d.dim, d.dim));
  });
  if (r.expert_hypnogram) {
    if (r.expert_hypnogram->size() != d.n_epochs) {
      throw DataError("recording " + r.id + ": hypnogram has " + std::to_string(r.expert_hypnogram->size()) +
                      " epochs, signal has " + std::to_string(d.n_epochs));
    }
    for (Stage s : r.expert_hypnogram->stages) d.labels.push_back(stage_index(s));
  }
  return d;
}

NormStats fit_input_norm(std::span<const RecordingData> train, Representation rep) {
  if (train.empty()) throw DataError("normalization needs at least one training recording");
  const std::size_t dim = train.front().dim;
  // Element groups sharing one mean and deviation.
  std::size_t groups = dim;
  auto group_of = [&](std::size_t j) -> std::size_t {
    switch (rep) {
      case Representation::Expert: return j;
      case Representation::Spectrogram: return j % kFreqBins;
      case Representation::Raw: return 0;
    }
    return j;
  };
  if (rep == Representation::Spectrogram) groups = kFreqBins;
  if (rep == Representation::Raw) groups = 1;
  std::vector<double> sum(groups, 0.0), count(groups, 0.0);
  for (const auto& d : train) {
    if (d.dim != dim || d.representation != rep) throw ShapeError("training recordings disagree on the input layout");
    for (std::size_t e = 0; e < d.n_epochs; ++e) {
      for (std::size_t j = 0; j < dim; ++j) {
        sum[group_of(j)] += d.inputs[e * dim + j];
        count[group_of(j)] += 1.0;
      }
    }
  }
  std::vector<double> mean(groups), var(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) mean[g] = count[g] > 0 ? sum[g] / count[g] : 0.0;
  for (const auto& d : train) {
    for (std::size_t e = 0; e < d.n_epochs; ++e) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double dv = d.inputs[e * dim + j] - mean[group_of(j)];
        var[group_of(j)] += dv * dv;
      }
    }
  }
  NormStats s;
  s.mean.resize(dim);
  s.stdev.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const std::size_t g = group_of(j);
    s.mean[j] = mean[g];
    s.stdev[j] = count[g] > 0 ? std::sqrt(var[g] / count[g]) : 0.0;
  }
  return s;
}

void normalize(RecordingData& d, const NormStats& s) {
  if (s.mean.size() != d.dim) {
    throw ShapeError("normalization statistics have " + std::to_string(s.mean.size()) + " entries, inputs have " +
                     std::to_string(d.dim));
  }
  apply_norm(std::span<double>(d.inputs), s);
}

nn::Batch gather(std::span<const RecordingData> recs, std::span<const ItemRef> items, std::size_t lookback) {
  if (recs.empty() || items.empty()) throw ShapeError("gather: empty batch");
  const std::size_t dim = recs.front().dim;
  nn::Batch b;
  b.steps = lookback;
  b.x.assign(lookback, nn::Matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(items.size())));
  b.labels.reserve(items.size());
  bool labelled = true;
  for (std::size_t j = 0; j < items.size(); ++j) {
    const auto& r = recs[items[j].recording];
    const std::size_t t = items[j].epoch;
    if (t >= r.n_epochs) throw ShapeError("gather: epoch " + std::to_string(t) + " out of range for " + r.id);
    for (std::size_t s = 0; s < lookback; ++s) {
      const std::size_t back = lookback - 1 - s;
      const auto src = r.row(t >= back ? t - back : 0);
      std::copy(src.begin(), src.end(), b.x[s].col(static_cast<Eigen::Index>(j)).data());
    }
    if (r.labels.empty()) {
      labelled = false;
    } else {
      b.labels.push_back(r.labels[t]);
    }
  }
  if (!labelled) b.labels.clear();
  return b;
}

SplitPlan make_split(std::vector<std::string> ids, std::array<double, 3> f, std::uint64_t seed) {
  if (ids.empty()) throw DataError("make_split: no recording ids");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw DataError("make_split: duplicate ids");
  for (double v : f) {
    if (!(v >= 0.0)) throw ParameterError("make_split: fractions must be nonnegative");
  }
  if (std::fabs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ParameterError("make_split: fractions must sum to 1");
  Rng rng(Rng::mix(seed, 0x5E11ULL));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const std::size_t n = ids.size();
  const auto n_val = static_cast<std::size_t>(std::floor(f[1] * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f[2] * static_cast<double>(n) + 1e-9));
  SplitPlan p;
  p.seed = seed;
  p.val_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  p.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                    ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  p.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
  return p;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ItemRef> all_items(std::span<const RecordingData> recs) {
  std::vector<ItemRef> items;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    for (std::size_t t = 0; t < recs[r].n_epochs; ++t) items.push_back({r, t});
  }
  return items;
}

constexpr std::size_t kInferenceChunk = 256;

std::vector<StageProbs> infer(const nn::Network& net, const nn::ParamSet& ps, std::span<const RecordingData> recs,
                              std::span<const ItemRef> items, unsigned threads) {
  std::vector<StageProbs> out(items.size());
  const std::size_t chunks = (items.size() + kInferenceChunk - 1) / kInferenceChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kInferenceChunk, hi = std::min(items.size(), lo + kInferenceChunk);
    const nn::Matrix p = net.forward(ps, gather(recs, items.subspan(lo, hi - lo), net.spec().lookback));
    for (std::size_t j = lo; j < hi; ++j) {
      for (std::size_t k = 0; k < kNumStages; ++k) {
        out[j][k] = p(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j - lo));
      }
    }
  });
  return out;
}

double mean_loss(std::span<const StageProbs> probs, std::span<const RecordingData> recs, std::span<const ItemRef> items) {
  double s = 0.0;
  for (std::size_t j = 0; j < items.size(); ++j) {
    const int y = recs[items[j].recording].labels[items[j].epoch];
    s += -std::log(std::max(probs[j][static_cast<std::size_t>(y)], nn::kProbClamp));
  }
  return s / static_cast<double>(items.size());
}

void check_data(const nn::ModelSpec& spec, std::span<const RecordingData> recs, const char* what) {
  if (recs.empty()) throw DataError(std::string("fit: no ") + what + " recordings");
  for (const auto& r : recs) {
    if (r.representation != spec.representation || r.dim != spec.input.size()) {
      throw ShapeError(std::string("fit: ") + what + " recording " + r.id + " does not match the model input");
    }
    if (r.labels.size() != r.n_epochs) throw DataError(std::string("fit: ") + what + " recording " + r.id + " is unlabelled");
  }
}

bool grads_finite(const nn::ParamSet& g) {
  return std::all_of(g.tensors.begin(), g.tensors.end(), [](const nn::Tensor& t) { return t.all_finite(); });
}

}  // namespace

TrainedModel fit(const nn::ModelSpec& spec, std::span<const RecordingData> training,
                 std::span<const RecordingData> validation, const TrainConfig& cfg) {
  check_data(spec, training, "training");
  check_data(spec, validation, "validation");
  if (cfg.batch_size == 0) throw ParameterError("fit: batch size must be positive");
  if (!(cfg.learning_rate >= 0.0)) throw ParameterError("fit: learning rate must be nonnegative");

  const nn::Network net(spec);
  TrainedModel m;
  m.spec = spec;
  m.config = cfg;
  m.norm = fit_input_norm(training, spec.representation);
  for (const auto& r : training) m.train_ids.push_back(r.id);
  for (const auto& r : validation) m.val_ids.push_back(r.id);

  std::vector<RecordingData> tr(training.begin(), training.end());
  std::vector<RecordingData> va(validation.begin(), validation.end());
  for (auto& r : tr) normalize(r, m.norm);
  for (auto& r : va) normalize(r, m.norm);

  std::array<double, kNumStages> weights{};
  std::span<const double> class_weights;
  if (cfg.class_weighting) {
    std::array<double, kNumStages> counts{};
    double n = 0.0;
    for (const auto& r : tr) {
      for (int y : r.labels) counts[static_cast<std::size_t>(y)] += 1.0, n += 1.0;
    }
    for (std::size_t k = 0; k < kNumStages; ++k) weights[k] = counts[k] > 0 ? n / (kNumStages * counts[k]) : 0.0;
    class_weights = weights;
  }

  nn::ParamSet params = net.init_params(cfg.seed);
  nn::ParamSet velocity = params.zeros_like();
  std::vector<ItemRef> items = all_items(tr);
  const std::vector<ItemRef> val_items = all_items(va);

  auto val_loss = [&](const nn::ParamSet& ps) { return mean_loss(infer(net, ps, va, val_items, cfg.threads), va, val_items); };

  nn::ParamSet best = params;
  double best_loss = val_loss(params);
  m.history.val_loss.push_back(best_loss);
  if (!std::isfinite(best_loss)) throw TrainingError(0, "validation loss is not finite at initialization");
  std::size_t step = 0, bad = 0;

  for (std::size_t pass = 0; pass < cfg.max_epochs; ++pass) {
    Rng shuffle(Rng::mix(cfg.seed, 0xE90C0000ULL + pass));
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[shuffle.below(i)]);
    double pass_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < items.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(items.size(), lo + cfg.batch_size);
      const nn::Batch batch = gather(tr, std::span<const ItemRef>(items).subspan(lo, hi - lo), spec.lookback);
      const nn::ForwardOptions opt{nn::Mode::Training, Rng::mix(cfg.seed, step), false};
      auto g = net.loss_and_grad(params, batch, opt, class_weights);
      if (!std::isfinite(g.loss) || !grads_finite(g.grads)) {
        throw TrainingError(step, "loss diverged (non-finite loss or gradient)");
      }
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& t : g.grads.tensors) {
          for (double v : t.data) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          const double scale = cfg.clip_norm / norm;
          for (auto& t : g.grads.tensors) {
            for (double& v : t.data) v *= scale;
          }
        }
      }
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].data;
        auto& v = velocity[p].data;
        const auto& gd = g.grads[p].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg.momentum * v[i] - cfg.learning_rate * gd[i];
          w[i] += v[i];
        }
      }
      pass_loss += g.loss;
      ++batches;
      ++step;
    }
    m.history.train_loss.push_back(pass_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    const double vl = val_loss(params);
    if (!std::isfinite(vl)) throw TrainingError(step, "validation loss diverged");
    m.history.val_loss.push_back(vl);
    if (vl < best_loss) {
      best_loss = vl;
      best = params;
      m.history.best_eval = m.history.val_loss.size() - 1;
      bad = 0;
    } else if (++bad >= cfg.patience) {
      m.history.early_stopped = true;
      break;
    }
  }
  m.history.steps = step;
  m.params = std::move(best);
  m.val_loss = best_loss;

  const auto probs = infer(net, m.params, va, val_items, cfg.threads);
  std::vector<int> expert, pred;
  for (std::size_t j = 0; j < val_items.size(); ++j) {
    expert.push_back(va[val_items[j].recording].labels[val_items[j].epoch]);
    pred.push_back(static_cast<int>(std::max_element(probs[j].begin(), probs[j].end()) - probs[j].begin()));
  }
  const auto cm = eval::confusion(expert, pred);
  m.val_accuracy = eval::accuracy(cm);
  m.val_kappa = eval::kappa(cm).kappa;
  return m;
}

Predictor::Predictor(const TrainedModel& m, RecordingData d) : model_(&m), net_(m.spec), data_(std::move(d)) {
  if (data_.representation != m.spec.representation || data_.dim != m.spec.input.size()) {
    throw ShapeError("recording " + data_.id + " inputs do not match model " + m.name);
  }
  normalize(data_, m.norm);
}

std::vector<StageProbs> Predictor::run(std::size_t first, std::size_t last, unsigned threads) const {
  if (first > last || last > data_.n_epochs) throw ShapeError("predict: epoch range out of bounds");
  if (first == last) return {};
  std::vector<ItemRef> items;
  items.reserve(last - first);
  for (std::size_t t = first; t < last; ++t) items.push_back({0, t});
  return infer(net_, model_->params, std::span<const RecordingData>(&data_, 1), items, threads);
}

std::vector<StageProbs> predict(const TrainedModel& m, const RecordingData& d, unsigned threads) {
  const Predictor p(m, d);
  return p.run(0, p.epochs(), threads);
}

// ---------------------------------------------------------------------------

std::vector<double> SearchSpace::sampling_learning_rates() const {
  std::vector<double> out;
  for (double v : learning_rate) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

void SearchSpace::validate() const {
  if (learning_rate.empty() || lookback.empty() || dropout_rate.empty() || hidden_units.empty() || n_layers.empty() ||
      filter_size.empty()) {
    throw ParameterError("search space has an empty value set");
  }
}

namespace {
template <typename T>
T pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}
}  // namespace

TrialConfig sample_trial(const SearchSpace& space, Rng& rng) {
  space.validate();
  TrialConfig t;
  t.learning_rate = pick(space.sampling_learning_rates(), rng);
  t.lookback = pick(space.lookback, rng);
  t.dropout_rate = pick(space.dropout_rate, rng);
  t.hidden_units = pick(space.hidden_units, rng);
  t.n_layers = pick(space.n_layers, rng);
  t.filter_size = pick(space.filter_size, rng);
  t.seed = rng.next_u64();
  return t;
}

nn::ModelSpec trial_spec(const TrialConfig& t, nn::Family f, Representation r, nn::Preset p, const SizeCaps& caps) {
  const bool desk = p == nn::Preset::Desk;
  const std::size_t hidden = desk ? std::min(t.hidden_units, caps.max_hidden) : t.hidden_units;
  const std::size_t layers = desk ? std::min(t.n_layers, caps.max_layers) : t.n_layers;
  const std::size_t lookback = desk ? std::min(t.lookback, caps.max_lookback) : t.lookback;
  nn::ModelSpec s = nn::preset_spec(p, f, r, lookback);
  if (f == nn::Family::MLP) s.dense_units.assign(layers, hidden);
  if (s.is_sequence()) {
    s.lstm_layers = layers;
    s.lstm_hidden = hidden;
  }
  if (f == nn::Family::CNN1D || f == nn::Family::CNN2D || f == nn::Family::RCNN) s.kernel = t.filter_size;
  s.dropout_keep = 1.0 - t.dropout_rate;
  s.seed = t.seed;
  return s;
}

std::string trial_manifest_line(const Trial& t, const SearchOptions& opt, const SearchSpace& space) {
  nlohmann::json j;
  j["trial"] = t.index;
  j["status"] = t.ok ? "ok" : "failed";
  if (!t.ok) j["error"] = t.error;
  j["sampled"] = detail::trial_config_to_json(t.sampled);
  j["effective"] = detail::spec_to_json(t.effective);
  j["preset"] = nn::preset_name(opt.preset);
  j["metrics"] = {{"val_loss", t.val_loss}, {"val_kappa", t.val_kappa}, {"val_accuracy", t.val_accuracy}};
  j["steps"] = t.steps;
  j["search_seed"] = opt.seed;
  j["learning_rate_listed"] = space.learning_rate;
  j["learning_rate_sampled_from"] = space.sampling_learning_rates();
  return j.dump();
}

namespace {

TrainConfig trial_config(const TrialConfig& t, const SearchOptions& opt) {
  TrainConfig c = opt.base;
  c.learning_rate = t.learning_rate;
  c.seed = t.seed;
  c.threads = 1;
  if (opt.preset == nn::Preset::Desk) c.max_epochs = std::min(c.max_epochs, opt.caps.max_epochs);
  return c;
}

}  // namespace

TrainedModel replay_trial(const Trial& t, std::span<const RecordingData> training,
                          std::span<const RecordingData> validation, const SearchOptions& opt) {
  return fit(t.effective, training, validation, trial_config(t.sampled, opt));
}

SearchResult random_search(const SearchSpace& space, std::span<const RecordingData> training,
                           std::span<const RecordingData> validation, const SearchOptions& opt) {
  if (opt.budget == 0) throw ParameterError("random search budget must be at least 1");
  space.validate();
  std::vector<Trial> trials(opt.budget);
  for (std::size_t i = 0; i < opt.budget; ++i) {
    Rng rng(Rng::mix(opt.seed, i));
    trials[i].index = i;
    trials[i].sampled = sample_trial(space, rng);
    trials[i].effective = trial_spec(trials[i].sampled, opt.family, opt.representation, opt.preset, opt.caps);
  }
  std::vector<std::optional<TrainedModel>> models(opt.budget);
  parallel_for(opt.budget, opt.threads, [&](std::size_t i) {
    Trial& t = trials[i];
    try {
      models[i] = replay_trial(t, training, validation, opt);
      t.ok = true;
      t.val_loss = models[i]->val_loss;
      t.val_kappa = models[i]->val_kappa;
      t.val_accuracy = models[i]->val_accuracy;
      t.steps = models[i]->history.steps;
    } catch (const Error& e) {
      t.ok = false;
      t.error = e.what();
    }
  });

  SearchResult res;
  for (const auto& t : trials) res.manifest.push_back(trial_manifest_line(t, opt, space));
  res.ranked = trials;
  std::stable_sort(res.ranked.begin(), res.ranked.end(), [](const Trial& a, const Trial& b) {
    if (a.ok != b.ok) return a.ok;
    if (a.val_kappa != b.val_kappa) return a.val_kappa > b.val_kappa;
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    return a.index < b.index;
  });
  if (res.ranked.front().ok) res.best = std::move(models[res.ranked.front().index]);
  return res;
}

}  // namespace somnus::train
