// SPDX-License-Identifier: Apache-2.0
#include "somnus/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <variant>

#include "somnus/error.hpp"
#include "somnus/rng.hpp"

namespace somnus::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, fill);
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape) {
  names.push_back(std::move(name));
  tensors.emplace_back(std::move(shape));
  return tensors.size() - 1;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  z.names = names;
  for (const auto& t : tensors) z.tensors.emplace_back(t.shape);
  return z;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (names != o.names || tensors.size() != o.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape != o.tensors[i].shape || tensors[i].data.size() != o.tensors[i].data.size()) return false;
  }
  return true;
}

namespace {
constexpr std::array<std::string_view, 6> kFamilyNames = {"LR", "MLP", "CNN1D", "CNN2D", "LSTM", "RCNN"};
constexpr std::array<std::string_view, 3> kRepNames = {"expert", "spectrogram", "raw"};
}  // namespace

std::string_view family_name(Family f) { return kFamilyNames[static_cast<std::size_t>(f)]; }

Family parse_family(std::string_view s) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    std::string lower(kFamilyNames[i]);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == kFamilyNames[i] || s == lower) return static_cast<Family>(i);
  }
  throw ParameterError("unknown model family '" + std::string(s) + "'");
}

std::string_view representation_name(Representation r) { return kRepNames[static_cast<std::size_t>(r)]; }

Representation parse_representation(std::string_view s) {
  for (std::size_t i = 0; i < kRepNames.size(); ++i) {
    if (s == kRepNames[i]) return static_cast<Representation>(i);
  }
  throw ParameterError("unknown representation '" + std::string(s) + "'");
}

InputShape input_shape_for(Representation r) {
  switch (r) {
    case Representation::Expert: return {1, 1, kNumExpertFeatures};
    case Representation::Spectrogram: return {1, kSubEpochs, kFreqBins};
    case Representation::Raw: return {1, 1, kEpochSamples};
  }
  return {};
}

void ModelSpec::validate() const {
  const std::string fam(family_name(family));
  if (input.size() == 0) throw ParameterError(fam + ": empty input shape");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ParameterError(fam + ": dropout keep must lie in (0, 1]");
  if (lookback < 1) throw ParameterError(fam + ": lookback must be at least 1");
  if (!is_sequence() && lookback != 1) throw ParameterError(fam + " is not a sequence model; lookback must be 1");
  if ((family == Family::CNN2D || family == Family::RCNN) && representation != Representation::Spectrogram) {
    throw ParameterError(fam + " requires the spectrogram representation");
  }
  if (family == Family::CNN1D && representation != Representation::Raw) {
    throw ParameterError("CNN1D requires the raw averaged waveform");
  }
  const bool conv = family == Family::CNN1D || family == Family::CNN2D || family == Family::RCNN;
  if (conv) {
    if (filters.empty()) throw ParameterError(fam + ": no conv filters");
    if (kernel != 1 && kernel != 3 && kernel != 5 && kernel != 7) {
      throw ParameterError(fam + ": filter size must be one of 3, 5, 7");
    }
    if (std::find(filters.begin(), filters.end(), std::size_t{0}) != filters.end()) {
      throw ParameterError(fam + ": zero-width conv layer");
    }
  }
  if (family == Family::MLP && (dense_units.empty() || std::find(dense_units.begin(), dense_units.end(), 0u) != dense_units.end())) {
    throw ParameterError("MLP needs nonzero hidden widths");
  }
  if (is_sequence() && (lstm_layers == 0 || lstm_hidden == 0)) throw ParameterError(fam + ": LSTM layers and hidden size required");
}

Preset parse_preset(std::string_view s) {
  if (s == "desk") return Preset::Desk;
  if (s == "paper") return Preset::Paper;
  throw ParameterError("unknown preset '" + std::string(s) + "' (expected desk or paper)");
}

std::string_view preset_name(Preset p) { return p == Preset::Desk ? "desk" : "paper"; }

ModelSpec preset_spec(Preset p, Family f, Representation r, std::size_t lookback) {
  ModelSpec s;
  s.family = f;
  s.representation = r;
  s.input = input_shape_for(r);
  s.lookback = (f == Family::LSTM || f == Family::RCNN) ? lookback : 1;
  const bool desk = p == Preset::Desk;
  if (f == Family::MLP) s.dense_units = desk ? std::vector<std::size_t>{64, 64} : std::vector<std::size_t>{1000, 1000};
  if (f == Family::CNN1D || f == Family::CNN2D || f == Family::RCNN) {
    s.filters = desk ? std::vector<std::size_t>{8, 16, 32} : std::vector<std::size_t>{32, 64, 128};
    s.kernel = 3;
  }
  if (f == Family::LSTM || f == Family::RCNN) {
    s.lstm_layers = desk ? 2 : 5;
    s.lstm_hidden = desk ? 64 : 1000;
  }
  s.dropout_keep = desk ? 1.0 : 0.9;
  return s;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double m = logits.col(b).maxCoeff();
    p.col(b) = (logits.col(b).array() - m).exp();
    p.col(b) /= p.col(b).sum();
  }
  return p;
}

namespace {

void check_labels(std::span<const int> labels, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(labels.size()) != cols) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(cols) + " items");
  }
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(kNumStages)) throw DataError("loss: label " + std::to_string(y) + " out of range");
  }
}

double class_weight(std::span<const double> w, int y) { return w.empty() ? 1.0 : w[static_cast<std::size_t>(y)]; }

}  // namespace

double cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const double> class_weights) {
  check_labels(labels, probs.cols());
  if (!class_weights.empty() && class_weights.size() != kNumStages) throw ShapeError("loss: need five class weights");
  double num = 0.0, den = 0.0;
  for (Eigen::Index b = 0; b < probs.cols(); ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    const double w = class_weight(class_weights, y);
    num += w * -std::log(std::max(probs(y, b), kProbClamp));
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

struct Dense {
  std::size_t in = 0, out = 0, w = 0, b = 0;
};
struct Conv {
  std::size_t cin = 0, cout = 0, h = 0, wd = 0, kh = 0, kw = 0, w = 0, b = 0;
};
struct Pool {
  std::size_t c = 0, h = 0, wd = 0, ph = 0, pw = 0;
  std::size_t oh() const { return h / ph; }
  std::size_t ow() const { return wd / pw; }
};
struct Relu {};
struct Drop {
  double keep = 1.0;
};
using FeedLayer = std::variant<Dense, Conv, Pool, Relu, Drop>;

struct Lstm {
  std::size_t in = 0, hidden = 0, wx = 0, wh = 0, b = 0;
};

struct FeedCache {
  Matrix in;                 // layer input (Dense, Conv) or output mask (Relu, Drop)
  std::vector<int> argmax;   // Pool
};

struct LstmCache {
  std::vector<Matrix> x, h, c, gates, tanh_c;  // h[s], c[s] are the states after step s
};

}  // namespace

struct Network::Plan {
  ModelSpec spec;
  ParamSet layout;
  std::vector<FeedLayer> trunk;
  std::vector<std::string> trunk_names;
  std::vector<std::string> trunk_shapes;  // output shape of each trunk layer
  std::vector<Lstm> rnn;
  Dense head;
  std::size_t feature_dim = 0;
};

namespace {

std::string shape_str(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

void build_plan(Network::Plan& p) {
  const ModelSpec& s = p.spec;
  std::size_t c = s.input.channels, h = s.input.height, w = s.input.width;
  auto push = [&](FeedLayer l, std::string name) {
    p.trunk.push_back(l);
    p.trunk_names.push_back(std::move(name));
    p.trunk_shapes.push_back(shape_str(c, h, w));
  };
  switch (s.family) {
    case Family::LR:
      break;
    case Family::MLP: {
      std::size_t in = c * h * w;
      for (std::size_t i = 0; i < s.dense_units.size(); ++i) {
        const std::string n = "dense" + std::to_string(i);
        Dense d{in, s.dense_units[i], p.layout.add(n + ".W", {s.dense_units[i], in}),
                p.layout.add(n + ".b", {s.dense_units[i]})};
        c = 1, h = 1, w = s.dense_units[i];
        push(d, n);
        push(Relu{}, n + ".relu");
        if (s.dropout_keep < 1.0) push(Drop{s.dropout_keep}, n + ".dropout");
        in = s.dense_units[i];
      }
      break;
    }
    case Family::CNN1D:
    case Family::CNN2D:
    case Family::RCNN: {
      const bool one_d = s.family == Family::CNN1D || h == 1;
      for (std::size_t i = 0; i < s.filters.size(); ++i) {
        const std::string n = "conv" + std::to_string(i);
        const std::size_t kh = one_d ? 1 : s.kernel;
        const std::size_t kw = s.kernel;
        Conv cv{c, s.filters[i], h, w, kh, kw, p.layout.add(n + ".W", {s.filters[i], c, kh, kw}),
                p.layout.add(n + ".b", {s.filters[i]})};
        c = s.filters[i];
        push(cv, n);
        push(Relu{}, n + ".relu");
        Pool pl{c, h, w, one_d ? 1u : 2u, 2};
        if (pl.oh() == 0 || pl.ow() == 0) {
          throw ShapeError("layer " + n + ".pool: input " + shape_str(c, h, w) + " too small to pool");
        }
        h = pl.oh();
        w = pl.ow();
        push(pl, n + ".pool");
      }
      break;
    }
    case Family::LSTM:
      break;
  }
  p.feature_dim = c * h * w;
  std::size_t top = p.feature_dim;
  if (s.is_sequence()) {
    for (std::size_t i = 0; i < s.lstm_layers; ++i) {
      const std::string n = "lstm" + std::to_string(i);
      const std::size_t H = s.lstm_hidden;
      Lstm l{top, H, p.layout.add(n + ".Wx", {4 * H, top}), p.layout.add(n + ".Wh", {4 * H, H}),
             p.layout.add(n + ".b", {4 * H})};
      p.rnn.push_back(l);
      top = H;
    }
  }
  p.head = Dense{top, kNumStages, p.layout.add("head.W", {kNumStages, top}), p.layout.add("head.b", {kNumStages})};
}

ConstRowMap mat(const ParamSet& ps, std::size_t i, std::size_t rows, std::size_t cols) {
  return ConstRowMap(ps[i].data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
RowMap mat(ParamSet& ps, std::size_t i, std::size_t rows, std::size_t cols) {
  return RowMap(ps[i].data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstVecMap vec(const ParamSet& ps, std::size_t i) {
  return ConstVecMap(ps[i].data.data(), static_cast<Eigen::Index>(ps[i].size()));
}
VecMap vec(ParamSet& ps, std::size_t i) { return VecMap(ps[i].data.data(), static_cast<Eigen::Index>(ps[i].size())); }

// Same-padding patches: row (c*kh + dy)*kw + dx, column y*W + x.
void im2col(const double* img, const Conv& cv, double* col) {
  const auto H = static_cast<std::ptrdiff_t>(cv.h), W = static_cast<std::ptrdiff_t>(cv.wd);
  const auto ph = static_cast<std::ptrdiff_t>(cv.kh / 2), pw = static_cast<std::ptrdiff_t>(cv.kw / 2);
  const std::size_t hw = cv.h * cv.wd;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cv.cin; ++c) {
    const double* plane = img + c * hw;
    for (std::ptrdiff_t dy = 0; dy < static_cast<std::ptrdiff_t>(cv.kh); ++dy) {
      for (std::ptrdiff_t dx = 0; dx < static_cast<std::ptrdiff_t>(cv.kw); ++dx, ++r) {
        double* row = col + r * hw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy - ph;
          double* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx - pw;
            dst[x] = (sx >= 0 && sx < W) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const Conv& cv, double* img) {
  const auto H = static_cast<std::ptrdiff_t>(cv.h), W = static_cast<std::ptrdiff_t>(cv.wd);
  const auto ph = static_cast<std::ptrdiff_t>(cv.kh / 2), pw = static_cast<std::ptrdiff_t>(cv.kw / 2);
  const std::size_t hw = cv.h * cv.wd;
  std::fill(img, img + cv.cin * hw, 0.0);
  std::size_t r = 0;
  for (std::size_t c = 0; c < cv.cin; ++c) {
    double* plane = img + c * hw;
    for (std::ptrdiff_t dy = 0; dy < static_cast<std::ptrdiff_t>(cv.kh); ++dy) {
      for (std::ptrdiff_t dx = 0; dx < static_cast<std::ptrdiff_t>(cv.kw); ++dx, ++r) {
        const double* row = col + r * hw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy - ph;
          if (sy < 0 || sy >= H) continue;
          double* dst = plane + sy * W;
          const double* src = row + y * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx - pw;
            if (sx >= 0 && sx < W) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

Matrix dropout_mask(double keep, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  const double scale = 1.0 / keep;
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.bernoulli(keep) ? scale : 0.0;
  }
  return m;
}

std::uint64_t mask_seed(std::uint64_t base, std::size_t layer, std::size_t step) {
  return Rng::mix(Rng::mix(base, 0xD809ULL + layer), step);
}

struct ForwardCtx {
  const Network::Plan& plan;
  const ParamSet& ps;
  const ForwardOptions& opt;
  bool keep_cache;
};

void finite_or_throw(const Matrix& m, const std::string& layer) {
  if (!m.allFinite()) throw DataError("non-finite activation after layer " + layer);
}

Matrix feed_forward(const ForwardCtx& ctx, std::size_t step, Matrix a, std::vector<FeedCache>* cache) {
  const auto& plan = ctx.plan;
  if (cache) cache->resize(plan.trunk.size());
  for (std::size_t li = 0; li < plan.trunk.size(); ++li) {
    const FeedLayer& layer = plan.trunk[li];
    FeedCache* fc = cache ? &(*cache)[li] : nullptr;
    Matrix out;
    if (const auto* d = std::get_if<Dense>(&layer)) {
      out = mat(ctx.ps, d->w, d->out, d->in) * a;
      out.colwise() += vec(ctx.ps, d->b);
      if (fc) fc->in = std::move(a);
    } else if (const auto* cv = std::get_if<Conv>(&layer)) {
      const std::size_t hw = cv->h * cv->wd, patch = cv->cin * cv->kh * cv->kw;
      out.resize(static_cast<Eigen::Index>(cv->cout * hw), a.cols());
      RowMat col(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw));
      const auto W = mat(ctx.ps, cv->w, cv->cout, patch);
      const auto bias = vec(ctx.ps, cv->b);
      for (Eigen::Index b = 0; b < a.cols(); ++b) {
        im2col(a.col(b).data(), *cv, col.data());
        RowMap o(out.col(b).data(), static_cast<Eigen::Index>(cv->cout), static_cast<Eigen::Index>(hw));
        o.noalias() = W * col;
        o.colwise() += bias;
      }
      if (fc) fc->in = std::move(a);
    } else if (const auto* pl = std::get_if<Pool>(&layer)) {
      const std::size_t oh = pl->oh(), ow = pl->ow(), in_hw = pl->h * pl->wd;
      out.resize(static_cast<Eigen::Index>(pl->c * oh * ow), a.cols());
      if (fc) fc->argmax.assign(static_cast<std::size_t>(out.size()), 0);
      for (Eigen::Index b = 0; b < a.cols(); ++b) {
        const double* src = a.col(b).data();
        double* dst = out.col(b).data();
        for (std::size_t c = 0; c < pl->c; ++c) {
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
              std::size_t best = c * in_hw + (y * pl->ph) * pl->wd + x * pl->pw;
              for (std::size_t dy = 0; dy < pl->ph; ++dy) {
                for (std::size_t dx = 0; dx < pl->pw; ++dx) {
                  const std::size_t idx = c * in_hw + (y * pl->ph + dy) * pl->wd + (x * pl->pw + dx);
                  if (src[idx] > src[best]) best = idx;
                }
              }
              const std::size_t o = (c * oh + y) * ow + x;
              dst[o] = src[best];
              if (fc) fc->argmax[static_cast<std::size_t>(b) * pl->c * oh * ow + o] = static_cast<int>(best);
            }
          }
        }
      }
    } else if (std::holds_alternative<Relu>(layer)) {
      out = a.cwiseMax(0.0);
      if (fc) fc->in = (a.array() > 0.0).cast<double>().matrix();
    } else if (const auto* dr = std::get_if<Drop>(&layer)) {
      if (ctx.opt.mode == Mode::Training && dr->keep < 1.0) {
        Matrix m = dropout_mask(dr->keep, a.rows(), a.cols(), mask_seed(ctx.opt.dropout_seed, li, step));
        out = a.cwiseProduct(m);
        if (fc) fc->in = std::move(m);
      } else {
        out = std::move(a);
        if (fc) fc->in.resize(0, 0);
      }
    }
    if (ctx.opt.check_finite) finite_or_throw(out, plan.trunk_names[li]);
    a = std::move(out);
  }
  return a;
}

// No input gradient is formed below the first trunk layer.
void feed_backward(const ForwardCtx& ctx, Matrix d, std::vector<FeedCache>& cache, ParamSet& g) {
  const auto& plan = ctx.plan;
  for (std::size_t li = plan.trunk.size(); li-- > 0;) {
    const FeedLayer& layer = plan.trunk[li];
    FeedCache& fc = cache[li];
    const bool need_dx = li > 0;
    if (const auto* dn = std::get_if<Dense>(&layer)) {
      mat(g, dn->w, dn->out, dn->in).noalias() += d * fc.in.transpose();
      vec(g, dn->b) += d.rowwise().sum();
      if (need_dx) d = mat(ctx.ps, dn->w, dn->out, dn->in).transpose() * d;
    } else if (const auto* cv = std::get_if<Conv>(&layer)) {
      const std::size_t hw = cv->h * cv->wd, patch = cv->cin * cv->kh * cv->kw;
      RowMat col(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw));
      RowMat dcol(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw));
      auto gW = mat(g, cv->w, cv->cout, patch);
      auto gb = vec(g, cv->b);
      const auto W = mat(ctx.ps, cv->w, cv->cout, patch);
      Matrix dx;
      if (need_dx) dx.resize(static_cast<Eigen::Index>(cv->cin * hw), d.cols());
      for (Eigen::Index b = 0; b < d.cols(); ++b) {
        im2col(fc.in.col(b).data(), *cv, col.data());
        ConstRowMap dout(d.col(b).data(), static_cast<Eigen::Index>(cv->cout), static_cast<Eigen::Index>(hw));
        gW.noalias() += dout * col.transpose();
        gb += dout.rowwise().sum();
        if (need_dx) {
          dcol.noalias() = W.transpose() * dout;
          col2im(dcol.data(), *cv, dx.col(b).data());
        }
      }
      d = std::move(dx);
    } else if (const auto* pl = std::get_if<Pool>(&layer)) {
      if (!need_dx) break;
      Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(pl->c * pl->h * pl->wd), d.cols());
      const std::size_t per = pl->c * pl->oh() * pl->ow();
      for (Eigen::Index b = 0; b < d.cols(); ++b) {
        for (std::size_t o = 0; o < per; ++o) {
          dx(fc.argmax[static_cast<std::size_t>(b) * per + o], b) += d(static_cast<Eigen::Index>(o), b);
        }
      }
      d = std::move(dx);
    } else if (std::holds_alternative<Relu>(layer)) {
      d = d.cwiseProduct(fc.in);
    } else if (std::holds_alternative<Drop>(layer)) {
      if (fc.in.size() != 0) d = d.cwiseProduct(fc.in);
    }
  }
}

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

std::vector<Matrix> lstm_forward(const ForwardCtx& ctx, const Lstm& l, std::size_t layer_idx,
                                 const std::vector<Matrix>& xs, LstmCache* cache) {
  const auto H = static_cast<Eigen::Index>(l.hidden);
  const Eigen::Index B = xs.front().cols();
  const auto Wx = mat(ctx.ps, l.wx, 4 * l.hidden, l.in);
  const auto Wh = mat(ctx.ps, l.wh, 4 * l.hidden, l.hidden);
  const auto bias = vec(ctx.ps, l.b);
  Matrix h = Matrix::Zero(H, B), c = Matrix::Zero(H, B);
  std::vector<Matrix> hs;
  hs.reserve(xs.size());
  if (cache) {
    cache->x = xs;
    cache->h.clear();
    cache->c.clear();
    cache->gates.clear();
    cache->tanh_c.clear();
  }
  for (const Matrix& x : xs) {
    Matrix z = Wx * x;
    z.noalias() += Wh * h;
    z.colwise() += bias;
    Matrix gates(4 * H, B);
    gates.topRows(3 * H) = sigmoid(z.topRows(3 * H));
    gates.bottomRows(H) = z.bottomRows(H).array().tanh().matrix();
    c = gates.middleRows(H, H).cwiseProduct(c) + gates.topRows(H).cwiseProduct(gates.bottomRows(H));
    Matrix tc = c.array().tanh().matrix();
    h = gates.middleRows(2 * H, H).cwiseProduct(tc);
    if (ctx.opt.check_finite) finite_or_throw(h, "lstm" + std::to_string(layer_idx));
    if (cache) {
      cache->gates.push_back(std::move(gates));
      cache->c.push_back(c);
      cache->h.push_back(h);
      cache->tanh_c.push_back(std::move(tc));
    }
    hs.push_back(h);
  }
  return hs;
}

// Returns gradients with respect to the layer inputs (empty when not needed).
std::vector<Matrix> lstm_backward(const ForwardCtx& ctx, const Lstm& l, std::vector<Matrix> dh_out,
                                  const LstmCache& cache, ParamSet& g, bool need_dx) {
  const auto H = static_cast<Eigen::Index>(l.hidden);
  const std::size_t T = cache.x.size();
  const Eigen::Index B = cache.x.front().cols();
  const auto Wx = mat(ctx.ps, l.wx, 4 * l.hidden, l.in);
  const auto Wh = mat(ctx.ps, l.wh, 4 * l.hidden, l.hidden);
  auto gWx = mat(g, l.wx, 4 * l.hidden, l.in);
  auto gWh = mat(g, l.wh, 4 * l.hidden, l.hidden);
  auto gb = vec(g, l.b);
  Matrix dh_next = Matrix::Zero(H, B), dc = Matrix::Zero(H, B);
  std::vector<Matrix> dx(need_dx ? T : 0);
  Matrix dz(4 * H, B);
  for (std::size_t t = T; t-- > 0;) {
    const Matrix& gates = cache.gates[t];
    const auto i = gates.topRows(H);
    const auto f = gates.middleRows(H, H);
    const auto o = gates.middleRows(2 * H, H);
    const auto gg = gates.bottomRows(H);
    const Matrix& tc = cache.tanh_c[t];
    const Matrix dh = dh_out[t] + dh_next;
    dc += (dh.cwiseProduct(o).array() * (1.0 - tc.array().square())).matrix();
    const Matrix c_prev = t > 0 ? cache.c[t - 1] : Matrix::Zero(H, B);
    dz.topRows(H) = (dc.cwiseProduct(gg).array() * i.array() * (1.0 - i.array())).matrix();
    dz.middleRows(H, H) = (dc.cwiseProduct(c_prev).array() * f.array() * (1.0 - f.array())).matrix();
    dz.middleRows(2 * H, H) = (dh.cwiseProduct(tc).array() * o.array() * (1.0 - o.array())).matrix();
    dz.bottomRows(H) = (dc.cwiseProduct(i).array() * (1.0 - gg.array().square())).matrix();
    gWx.noalias() += dz * cache.x[t].transpose();
    if (t > 0) gWh.noalias() += dz * cache.h[t - 1].transpose();
    gb += dz.rowwise().sum();
    if (need_dx) dx[t] = Wx.transpose() * dz;
    dh_next = Wh.transpose() * dz;
    dc = dc.cwiseProduct(f);
  }
  return dx;
}

void check_batch(const Network::Plan& p, const Batch& batch) {
  if (batch.x.size() != batch.steps || batch.steps == 0) throw ShapeError("layer input: batch step count mismatch");
  if (batch.steps != p.spec.lookback) {
    throw ShapeError("layer input: " + std::to_string(batch.steps) + " steps, model lookback is " +
                     std::to_string(p.spec.lookback));
  }
  const auto dim = static_cast<Eigen::Index>(p.spec.input.size());
  for (const Matrix& x : batch.x) {
    if (x.rows() != dim) {
      throw ShapeError("layer input: expected " + std::to_string(dim) + " features per item, got " +
                       std::to_string(x.rows()));
    }
    if (x.cols() != batch.x.front().cols()) throw ShapeError("layer input: ragged batch");
  }
}

struct Pass {
  std::vector<std::vector<FeedCache>> trunk;  // per step
  std::vector<LstmCache> rnn;
  std::vector<Matrix> drop_masks;  // per LSTM layer, stacked over steps: rows H*T
  Matrix top;
  Matrix probs;
};

void run_forward(const ForwardCtx& ctx, const Batch& batch, Pass& pass) {
  const auto& plan = ctx.plan;
  check_batch(plan, batch);
  const std::size_t T = batch.steps;
  std::vector<Matrix> seq(T);
  if (ctx.keep_cache) pass.trunk.resize(T);
  for (std::size_t s = 0; s < T; ++s) {
    seq[s] = feed_forward(ctx, s, batch.x[s], ctx.keep_cache ? &pass.trunk[s] : nullptr);
  }
  if (!plan.rnn.empty()) {
    if (ctx.keep_cache) {
      pass.rnn.resize(plan.rnn.size());
      pass.drop_masks.assign(plan.rnn.size(), Matrix());
    }
    const bool drop = ctx.opt.mode == Mode::Training && plan.spec.dropout_keep < 1.0;
    for (std::size_t li = 0; li < plan.rnn.size(); ++li) {
      seq = lstm_forward(ctx, plan.rnn[li], li, seq, ctx.keep_cache ? &pass.rnn[li] : nullptr);
      if (drop) {
        const auto H = seq.front().rows();
        Matrix m = dropout_mask(plan.spec.dropout_keep, H * static_cast<Eigen::Index>(T), seq.front().cols(),
                                mask_seed(ctx.opt.dropout_seed, 1000 + li, 0));
        for (std::size_t s = 0; s < T; ++s) {
          seq[s] = seq[s].cwiseProduct(m.middleRows(static_cast<Eigen::Index>(s) * H, H));
        }
        if (ctx.keep_cache) pass.drop_masks[li] = std::move(m);
      }
    }
  }
  pass.top = std::move(seq.back());
  Matrix logits = mat(ctx.ps, plan.head.w, plan.head.out, plan.head.in) * pass.top;
  logits.colwise() += vec(ctx.ps, plan.head.b);
  if (ctx.opt.check_finite) finite_or_throw(logits, "head");
  pass.probs = softmax(logits);
}

void check_params(const Network::Plan& plan, const ParamSet& ps) {
  if (!plan.layout.same_layout(ps)) {
    for (std::size_t i = 0; i < std::min(ps.size(), plan.layout.size()); ++i) {
      if (ps.names[i] != plan.layout.names[i] || ps[i].shape != plan.layout[i].shape) {
        throw ShapeError("layer " + plan.layout.names[i] + ": parameter shape does not match the model");
      }
    }
    throw ShapeError("parameter count " + std::to_string(ps.size()) + " does not match the model (" +
                     std::to_string(plan.layout.size()) + ")");
  }
}

}  // namespace

Network::Network(ModelSpec spec) {
  spec.validate();
  auto p = std::make_shared<Plan>();
  p->spec = std::move(spec);
  build_plan(*p);
  plan_ = std::move(p);
}

const ModelSpec& Network::spec() const { return plan_->spec; }
std::size_t Network::feature_dim() const { return plan_->feature_dim; }
ParamSet Network::layout() const { return plan_->layout.zeros_like(); }

std::vector<std::string> Network::describe() const {
  std::vector<std::string> out;
  const auto& s = plan_->spec;
  out.push_back("input " + shape_str(s.input.channels, s.input.height, s.input.width));
  for (std::size_t i = 0; i < plan_->trunk.size(); ++i) {
    out.push_back(plan_->trunk_names[i] + " " + plan_->trunk_shapes[i]);
  }
  out.push_back("features " + std::to_string(plan_->feature_dim));
  for (std::size_t i = 0; i < plan_->rnn.size(); ++i) {
    out.push_back("lstm" + std::to_string(i) + " " + std::to_string(plan_->rnn[i].hidden) + " x " + std::to_string(s.lookback));
  }
  out.push_back("head 5");
  return out;
}

ParamSet Network::init_params(std::uint64_t seed) const {
  ParamSet ps = layout();
  Rng rng(Rng::mix(seed, 0x1417ULL));
  auto fill_uniform = [&](std::size_t idx, double bound) {
    for (double& v : ps[idx].data) v = rng.uniform(-bound, bound);
  };
  for (const auto& layer : plan_->trunk) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      fill_uniform(d->w, std::sqrt(6.0 / static_cast<double>(d->in)));
    } else if (const auto* cv = std::get_if<Conv>(&layer)) {
      fill_uniform(cv->w, std::sqrt(6.0 / static_cast<double>(cv->cin * cv->kh * cv->kw)));
    }
  }
  for (const auto& l : plan_->rnn) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.hidden));
    fill_uniform(l.wx, bound);
    fill_uniform(l.wh, bound);
    auto& b = ps[l.b].data;
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(l.hidden), b.begin() + static_cast<std::ptrdiff_t>(2 * l.hidden), 1.0);
  }
  fill_uniform(plan_->head.w, std::sqrt(6.0 / static_cast<double>(plan_->head.in + plan_->head.out)));
  return ps;
}

Matrix Network::forward(const ParamSet& params, const Batch& batch, const ForwardOptions& opt) const {
  check_params(*plan_, params);
  ForwardCtx ctx{*plan_, params, opt, false};
  Pass pass;
  run_forward(ctx, batch, pass);
  return std::move(pass.probs);
}

Network::Gradient Network::loss_and_grad(const ParamSet& params, const Batch& batch, const ForwardOptions& opt,
                                         std::span<const double> class_weights) const {
  check_params(*plan_, params);
  const auto& plan = *plan_;
  ForwardCtx ctx{plan, params, opt, true};
  Pass pass;
  run_forward(ctx, batch, pass);
  check_labels(batch.labels, pass.probs.cols());
  if (!class_weights.empty() && class_weights.size() != kNumStages) throw ShapeError("loss: need five class weights");

  Gradient out;
  out.loss = cross_entropy(pass.probs, batch.labels, class_weights);
  out.grads = layout();
  ParamSet& g = out.grads;

  double wsum = 0.0;
  for (int y : batch.labels) wsum += class_weight(class_weights, y);
  Matrix d = pass.probs;
  for (Eigen::Index b = 0; b < d.cols(); ++b) {
    const int y = batch.labels[static_cast<std::size_t>(b)];
    d(y, b) -= 1.0;
    d.col(b) *= class_weight(class_weights, y) / wsum;
  }
  mat(g, plan.head.w, plan.head.out, plan.head.in).noalias() += d * pass.top.transpose();
  vec(g, plan.head.b) += d.rowwise().sum();
  Matrix dtop = mat(params, plan.head.w, plan.head.out, plan.head.in).transpose() * d;

  const std::size_t T = batch.steps;
  std::vector<Matrix> dseq(T);
  if (!plan.rnn.empty()) {
    const auto B = dtop.cols();
    for (std::size_t s = 0; s + 1 < T; ++s) dseq[s] = Matrix::Zero(static_cast<Eigen::Index>(plan.rnn.back().hidden), B);
    dseq[T - 1] = std::move(dtop);
    for (std::size_t li = plan.rnn.size(); li-- > 0;) {
      if (pass.drop_masks.size() > li && pass.drop_masks[li].size() != 0) {
        const auto H = static_cast<Eigen::Index>(plan.rnn[li].hidden);
        for (std::size_t s = 0; s < T; ++s) {
          dseq[s] = dseq[s].cwiseProduct(pass.drop_masks[li].middleRows(static_cast<Eigen::Index>(s) * H, H));
        }
      }
      const bool need_dx = li > 0 || !plan.trunk.empty();
      dseq = lstm_backward(ctx, plan.rnn[li], std::move(dseq), pass.rnn[li], g, need_dx);
      if (!need_dx) break;
    }
  } else {
    dseq[0] = std::move(dtop);
  }
  if (!plan.trunk.empty()) {
    for (std::size_t s = 0; s < T; ++s) feed_backward(ctx, std::move(dseq[s]), pass.trunk[s], g);
  }
  out.probs = std::move(pass.probs);
  return out;
}

std::vector<std::size_t> lookback_window(std::size_t t, std::size_t L) {
  if (L < 1) throw ParameterError("lookback must be at least 1");
  std::vector<std::size_t> w(L);
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t back = L - 1 - s;
    w[s] = t >= back ? t - back : 0;
  }
  return w;
}

namespace {

template <typename RowFn>
SequenceSet sequences(std::size_t n, std::size_t dim, std::size_t L, const Hypnogram* labels, RowFn&& row) {
  if (L < 1) throw ParameterError("lookback must be at least 1");
  if (labels && labels->size() != n) {
    throw ShapeError("sequence labels: " + std::to_string(labels->size()) + " stages for " + std::to_string(n) + " epochs");
  }
  SequenceSet s;
  s.n_items = n;
  s.steps = L;
  s.dim = dim;
  s.values.resize(n * L * dim);
  for (std::size_t t = 0; t < n; ++t) {
    const auto w = lookback_window(t, L);
    for (std::size_t k = 0; k < L; ++k) row(w[k], s.values.data() + (t * L + k) * dim);
  }
  if (labels) {
    s.labels.reserve(n);
    for (Stage st : labels->stages) s.labels.push_back(stage_index(st));
  }
  return s;
}

}  // namespace

SequenceSet build_sequences(const FeatureMatrix& fm, std::size_t L, const Hypnogram* labels) {
  return sequences(fm.n_epochs, kNumExpertFeatures, L, labels, [&](std::size_t e, double* dst) {
    const auto r = fm.row(e);
    std::copy(r.begin(), r.end(), dst);
  });
}

SequenceSet build_sequences(const SpectrogramTensor& st, std::size_t L, const Hypnogram* labels) {
  constexpr std::size_t kGrid = kSubEpochs * kFreqBins;
  if (st.values.size() != st.n_epochs * kGrid) throw ShapeError("spectrogram tensor size does not match its epoch count");
  return sequences(st.n_epochs, kGrid, L, labels, [&](std::size_t e, double* dst) {
    const float* src = st.values.data() + e * kGrid;
    for (std::size_t i = 0; i < kGrid; ++i) dst[i] = to_db(src[i]);
  });
}

Batch make_batch(const SequenceSet& s, std::span<const std::size_t> items) {
  Batch b;
  b.steps = s.steps;
  b.x.assign(s.steps, Matrix(static_cast<Eigen::Index>(s.dim), static_cast<Eigen::Index>(items.size())));
  for (std::size_t j = 0; j < items.size(); ++j) {
    if (items[j] >= s.n_items) throw ShapeError("batch item " + std::to_string(items[j]) + " out of range");
    for (std::size_t k = 0; k < s.steps; ++k) {
      const auto src = s.step(items[j], k);
      std::copy(src.begin(), src.end(), b.x[k].col(static_cast<Eigen::Index>(j)).data());
    }
    if (!s.labels.empty()) b.labels.push_back(s.labels[items[j]]);
  }
  return b;
}

GradCheckReport gradient_check(const Network& net, const ParamSet& params, const Batch& batch, double h,
                               const ForwardOptions& opt) {
  GradCheckReport rep;
  const auto analytic = net.loss_and_grad(params, batch, opt).grads;
  ParamSet probe = params;
  auto loss_at = [&]() { return cross_entropy(net.forward(probe, batch, opt), batch.labels); };
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double orig = probe[p].data[i];
      probe[p].data[i] = orig + h;
      const double up = loss_at();
      probe[p].data[i] = orig - h;
      const double down = loss_at();
      probe[p].data[i] = orig;
      const double num = (up - down) / (2.0 * h);
      const double a = analytic[p].data[i];
      const double rel = std::fabs(a - num) / std::max({std::fabs(a), std::fabs(num), kGradCheckFloor});
      ++rep.checked;
      if (rel > rep.max_rel_error || rep.worst_param.empty()) {
        rep.max_rel_error = rel;
        rep.worst_param = probe.names[p];
        rep.worst_index = i;
        rep.analytic = a;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace somnus::nn
