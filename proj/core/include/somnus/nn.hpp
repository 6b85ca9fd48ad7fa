// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somnus/features.hpp"
#include "somnus/hypnogram.hpp"
#include "somnus/spectral.hpp"

namespace somnus::nn {

/// Activations are features x batch, column-major: column b is item b.
using Matrix = Eigen::MatrixXd;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  std::size_t size() const { return data.size(); }
  bool all_finite() const;
  bool operator==(const Tensor&) const = default;
};

/// Named parameters in declaration order. The order is the serialization order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t add(std::string name, std::vector<std::size_t> shape);
  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  Tensor& operator[](std::size_t i) { return tensors[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& o) const;
  bool operator==(const ParamSet&) const = default;
};

enum class Family { LR, MLP, CNN1D, CNN2D, LSTM, RCNN };
enum class Representation { Expert, Spectrogram, Raw };

std::string_view family_name(Family f);
Family parse_family(std::string_view s);  // ParameterError on unknown names
std::string_view representation_name(Representation r);
Representation parse_representation(std::string_view s);

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

/// expert: 1x1x96; spectrogram: 1x29x257 (dB of the six-channel average);
/// raw: 1x1x6000 (six-channel mean waveform).
InputShape input_shape_for(Representation r);

struct ModelSpec {
  Family family = Family::LR;
  Representation representation = Representation::Expert;
  InputShape input = input_shape_for(Representation::Expert);
  std::size_t lookback = 1;
  std::vector<std::size_t> dense_units;  // MLP hidden widths
  std::vector<std::size_t> filters;      // conv stack, one pooled block each
  std::size_t kernel = 3;                // conv spatial size, odd
  std::size_t lstm_layers = 0;
  std::size_t lstm_hidden = 0;
  double dropout_keep = 1.0;
  std::uint64_t seed = 0;

  bool is_sequence() const { return family == Family::LSTM || family == Family::RCNN; }
  /// Throws ParameterError for family/representation mismatches, kernel
  /// outside {3,5,7} (1 is also allowed for tests), keep outside (0,1],
  /// lookback != 1 on non-sequence families, or missing layer sizes.
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

enum class Preset { Desk, Paper };
Preset parse_preset(std::string_view s);
std::string_view preset_name(Preset p);

/// Layer sizes of a preset. Desk: MLP 2x64, filters 8/16/32, LSTM 2x64.
/// Paper: MLP 2x1000, filters 32/64/128, LSTM 5x1000, keep 0.9.
ModelSpec preset_spec(Preset p, Family f, Representation r, std::size_t lookback = 1);

struct Batch {
  std::size_t steps = 1;
  std::vector<Matrix> x;    // one input_dim x B matrix per step, oldest first
  std::vector<int> labels;  // B entries, or empty for inference
  std::size_t size() const { return x.empty() ? 0 : static_cast<std::size_t>(x.front().cols()); }
};

enum class Mode { Inference, Training };

struct ForwardOptions {
  Mode mode = Mode::Inference;
  std::uint64_t dropout_seed = 0;  // fixes every dropout mask of the call
  bool check_finite = false;       // DataError naming the first layer producing a non-finite value
};

Matrix softmax(const Matrix& logits);  // column-wise, max-shifted

inline constexpr double kProbClamp = 1e-12;

/// Mean of -log max(p[label], 1e-12). With class weights w, the weighted mean
/// sum(w[y] l) / sum(w[y]). DataError for labels outside 0..4.
double cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const double> class_weights = {});

/// The network described by a ModelSpec: a per-step trunk (dense or conv
/// blocks), an optional LSTM stack over the steps, and a softmax head on the
/// last step. Immutable after construction; forward is safe to call from
/// many threads with the same parameters.
class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const;
  /// Freshly initialised parameters, deterministic in `seed`.
  ParamSet init_params(std::uint64_t seed) const;
  /// Empty parameter set with the right names and shapes.
  ParamSet layout() const;
  /// Width of the vector the trunk hands to the LSTM stack or the head.
  std::size_t feature_dim() const;
  /// One line per layer: name, output shape.
  std::vector<std::string> describe() const;

  /// 5 x B stage probabilities.
  Matrix forward(const ParamSet& params, const Batch& batch, const ForwardOptions& opt = {}) const;

  struct Gradient {
    double loss = 0.0;
    Matrix probs;
    ParamSet grads;
  };
  /// Loss and gradients of every parameter for a labelled batch.
  Gradient loss_and_grad(const ParamSet& params, const Batch& batch, const ForwardOptions& opt = {},
                         std::span<const double> class_weights = {}) const;

  struct Plan;

 private:
  std::shared_ptr<const Plan> plan_;
};

/// Epoch indices of the window ending at t: [t-L+1 .. t], left-padded with 0.
std::vector<std::size_t> lookback_window(std::size_t t, std::size_t L);

/// Every epoch as one labelled item: item t spans lookback_window(t, L).
struct SequenceSet {
  std::size_t n_items = 0;
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // item-major, then step, then feature
  std::vector<int> labels;     // empty without a hypnogram

  std::span<const double> step(std::size_t item, std::size_t s) const {
    return std::span<const double>(values).subspan((item * steps + s) * dim, dim);
  }
};

/// ParameterError for L < 1; ShapeError when labels do not match the epochs.
SequenceSet build_sequences(const FeatureMatrix& fm, std::size_t L, const Hypnogram* labels = nullptr);
SequenceSet build_sequences(const SpectrogramTensor& st, std::size_t L, const Hypnogram* labels = nullptr);

/// Batch of the items in `items` from a SequenceSet.
Batch make_batch(const SequenceSet& s, std::span<const std::size_t> items);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Relative errors use |a - n| / max(|a|, |n|, kGradCheckFloor). The floor sits
/// above the central-difference roundoff eps * |loss| / h ~ 3e-11 at h = 1e-5.
inline constexpr double kGradCheckFloor = 1e-6;

/// Central differences over every scalar parameter against loss_and_grad.
/// Dropout masks are held fixed by reusing opt.dropout_seed.
GradCheckReport gradient_check(const Network& net, const ParamSet& params, const Batch& batch, double h = 1e-5,
                               const ForwardOptions& opt = {Mode::Training, 7, false});

}  // namespace somnus::nn
