// SPDX-License-Identifier: Apache-2.0
#include "somnus/eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "somnus/error.hpp"

namespace somnus::eval {

ConfusionMatrix ConfusionMatrix::from_counts(const CountTable& c) {
  ConfusionMatrix cm;
  cm.counts = c;
  for (const auto& row : c) {
    for (auto v : row) cm.n_total += v;
  }
  return cm;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t r) const {
  std::uint64_t s = 0;
  for (auto v : counts[r]) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (const auto& row : counts) s += row[c];
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < kNumStages; ++i) s += counts[i][i];
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    for (std::size_t j = 0; j < kNumStages; ++j) counts[i][j] += o.counts[i][j];
  }
  n_total += o.n_total;
  return *this;
}

ConfusionMatrix confusion(std::span<const int> expert, std::span<const int> pred) {
  if (expert.size() != pred.size()) {
    throw DataError("confusion: expert has " + std::to_string(expert.size()) + " epochs, prediction has " +
                    std::to_string(pred.size()));
  }
  if (expert.empty()) throw DataError("confusion: no epochs");
  ConfusionMatrix cm;
  for (std::size_t t = 0; t < expert.size(); ++t) {
    const int e = expert[t], p = pred[t];
    if (e < 0 || e >= static_cast<int>(kNumStages) || p < 0 || p >= static_cast<int>(kNumStages)) {
      throw DataError("confusion: stage index out of range at epoch " + std::to_string(t));
    }
    ++cm.counts[static_cast<std::size_t>(e)][static_cast<std::size_t>(p)];
  }
  cm.n_total = expert.size();
  return cm;
}

ConfusionMatrix confusion(const Hypnogram& expert, const Hypnogram& pred) {
  std::vector<int> e, p;
  e.reserve(expert.size());
  p.reserve(pred.size());
  for (Stage s : expert.stages) e.push_back(stage_index(s));
  for (Stage s : pred.stages) p.push_back(stage_index(s));
  return confusion(e, p);
}

NormalizedConfusion normalize_rows(const ConfusionMatrix& cm) {
  NormalizedConfusion n;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const auto rs = cm.row_sum(i);
    n.empty[i] = rs == 0;
    if (rs == 0) continue;
    for (std::size_t j = 0; j < kNumStages; ++j) {
      n.rows[i][j] = static_cast<double>(cm.counts[i][j]) / static_cast<double>(rs);
    }
  }
  return n;
}

KappaResult kappa(const ConfusionMatrix& cm) {
  if (cm.n_total == 0) throw DataError("kappa: empty confusion matrix");
  const double n = static_cast<double>(cm.n_total);
  KappaResult k;
  k.p0 = static_cast<double>(cm.trace()) / n;
  for (std::size_t c = 0; c < kNumStages; ++c) {
    k.pe += (static_cast<double>(cm.row_sum(c)) / n) * (static_cast<double>(cm.col_sum(c)) / n);
  }
  // pe reaches exactly 1 only when both raters put everything in one class.
  if (k.pe >= 1.0) {
    k.degenerate = true;
    k.kappa = k.p0 >= 1.0 ? 1.0 : 0.0;
  } else {
    k.kappa = (k.p0 - k.pe) / (1.0 - k.pe);
  }
  return k;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.n_total == 0) throw DataError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.n_total);
}

StageScores stage_scores(const ConfusionMatrix& cm) {
  StageScores s;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const auto rs = cm.row_sum(i), cs = cm.col_sum(i);
    s.support[i] = rs;
    s.recall_defined[i] = rs > 0;
    s.precision_defined[i] = cs > 0;
    if (rs > 0) s.recall[i] = static_cast<double>(cm.counts[i][i]) / static_cast<double>(rs);
    if (cs > 0) s.precision[i] = static_cast<double>(cm.counts[i][i]) / static_cast<double>(cs);
  }
  return s;
}

MetricsReport evaluate(std::span<const LabelledPair> pairs) {
  if (pairs.empty()) throw DataError("evaluate: no recordings");
  MetricsReport m;
  for (const auto& p : pairs) {
    ConfusionMatrix cm;
    try {
      cm = confusion(p.expert, p.predicted);
    } catch (const DataError& e) {
      throw DataError("recording " + p.id + ": " + e.what());
    }
    m.pooled += cm;
    RecordingScore r{p.id, cm.n_total, accuracy(cm), kappa(cm)};
    m.mean_recording_accuracy += r.accuracy;
    m.mean_recording_kappa += r.kappa.kappa;
    m.recordings.push_back(std::move(r));
  }
  m.mean_recording_accuracy /= static_cast<double>(pairs.size());
  m.mean_recording_kappa /= static_cast<double>(pairs.size());
  m.kappa = kappa(m.pooled);
  m.accuracy = accuracy(m.pooled);
  m.normalized = normalize_rows(m.pooled);
  m.stages = stage_scores(m.pooled);
  return m;
}

namespace {
std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string format_metrics_report(const MetricsReport& m) {
  std::ostringstream os;
  os << "somnus-metrics 1\n";
  os << "epochs " << m.pooled.n_total << '\n';
  os << "recordings " << m.recordings.size() << '\n';
  os << "accuracy " << fixed(m.accuracy) << '\n';
  os << "kappa " << fixed(m.kappa.kappa) << '\n';
  os << "p0 " << fixed(m.kappa.p0) << '\n';
  os << "pe " << fixed(m.kappa.pe) << '\n';
  os << "kappa_degenerate " << (m.kappa.degenerate ? "true" : "false") << '\n';
  os << "mean_recording_accuracy " << fixed(m.mean_recording_accuracy) << '\n';
  os << "mean_recording_kappa " << fixed(m.mean_recording_kappa) << '\n';
  os << "# counts: rows expert, columns predicted, order W N1 N2 N3 R\n";
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << "counts " << stage_symbol(kAllStages[i]);
    for (auto v : m.pooled.counts[i]) os << ' ' << v;
    os << '\n';
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << "normalized " << stage_symbol(kAllStages[i]);
    for (double v : m.normalized.rows[i]) os << ' ' << fixed(v);
    if (m.normalized.empty[i]) os << " empty";
    os << '\n';
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << "stage " << stage_symbol(kAllStages[i]) << " support " << m.stages.support[i] << " recall "
       << (m.stages.recall_defined[i] ? fixed(m.stages.recall[i]) : "-") << " precision "
       << (m.stages.precision_defined[i] ? fixed(m.stages.precision[i]) : "-") << '\n';
  }
  for (const auto& r : m.recordings) {
    os << "recording " << r.id << " epochs " << r.epochs << " accuracy " << fixed(r.accuracy) << " kappa "
       << fixed(r.kappa.kappa) << '\n';
  }
  return os.str();
}

}  // namespace somnus::eval
