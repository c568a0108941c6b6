#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "jsa/dense_array.hpp"

namespace jsa {

// Sigmoid outputs are clamped into [kProbClamp, 1 - kProbClamp] so that
// Bernoulli log-masses stay finite.
inline constexpr double kProbClamp = 1e-7;
inline constexpr double kLeakySlope = 0.01;

namespace layer {

// Parameters live in the owning net's flat vector: in*out weights stored
// row-major as [in, out], followed by out biases, starting at `offset`.
struct Linear {
  std::size_t in;
  std::size_t out;
  std::size_t offset;
};
struct LeakyReLU {
  double slope = kLeakySlope;
};
struct Tanh {};
struct Sigmoid {};
struct GroupSoftmax {
  std::size_t groups;
  std::size_t group_size;
};

}  // namespace layer

using Layer = std::variant<layer::Linear, layer::LeakyReLU, layer::Tanh, layer::Sigmoid,
                           layer::GroupSoftmax>;

/// Everything forward() computed: entry 0 is the input, entry k+1 the output
/// of layer k. All entries are matrices with one row per batch element.
using Activations = std::vector<DenseArray>;

struct NetGradients {
  DenseArray params;  // same layout as LayeredNet::params()
  DenseArray input;   // d(loss)/d(input), one row per batch element
};

/// Feedforward stack of linear maps and elementwise/groupwise activations.
class LayeredNet {
 public:
  LayeredNet() = default;
  explicit LayeredNet(std::size_t input_width) : input_width_(input_width) {}

  LayeredNet& add_linear(std::size_t out);
  LayeredNet& add_leaky_relu(double slope = kLeakySlope);
  LayeredNet& add_tanh();
  LayeredNet& add_sigmoid();
  LayeredNet& add_group_softmax(std::size_t groups, std::size_t group_size);

  /// Weights uniform in [-a, a] with a = sqrt(6 / (in + out)); biases zero.
  void init_params(std::mt19937_64& rng);

  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t output_width() const noexcept;
  std::size_t num_params() const noexcept { return params_.size(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  /// Rank-1 input is treated as a batch of one.
  Activations forward(const DenseArray& input) const;

  /// Full gradient of the scalar whose output-gradient is `grad_output`.
  NetGradients backward(const Activations& acts, const DenseArray& grad_output) const;

  /// Adds parameter gradients into `param_grads` (length num_params()). When
  /// `input_grad` is non-null it receives d(loss)/d(input).
  void backward_accumulate(const Activations& acts, const DenseArray& grad_output,
                           std::span<double> param_grads, DenseArray* input_grad) const;

  /// Compact description such as "784-200s" used in diagnostics.
  std::string describe() const;

 private:
  std::size_t input_width_ = 0;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

/// Central-difference gradient of `fn` at `params`, one coordinate at a time.
DenseArray finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                            const DenseArray& params, double eps);

/// Central differences for the listed coordinates only; result[i] belongs to coords[i].
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> params, double eps,
                                     std::span<const std::size_t> coords);

/// |a - b| / max(|a|, |b|, floor): relative error that stays meaningful near zero.
double relative_error(double a, double b, double floor = 1e-3);

struct AdamState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 3e-4;

  static AdamState for_params(std::size_t n, double lr);
};

/// One bias-corrected Adam descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace jsa
