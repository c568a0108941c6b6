#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jsa/dense_array.hpp"
#include "jsa/net.hpp"

namespace jsa {

enum class LatentKind { Bernoulli, Categorical };

struct StochasticLayerSpec {
  LatentKind kind = LatentKind::Bernoulli;
  std::size_t width = 0;
  // Categorical only: width == n_vars * n_categories, one-hot blocks concatenated.
  std::size_t n_vars = 0;
  std::size_t n_categories = 0;

  static StochasticLayerSpec bernoulli(std::size_t width);
  static StochasticLayerSpec categorical(std::size_t n_vars, std::size_t n_categories);

  /// log2 of the number of configurations (fractional for categorical).
  double log2_support() const;
  std::string describe() const;

  friend bool operator==(const StochasticLayerSpec&, const StochasticLayerSpec&) = default;
};

/// One latent sample: entry k is stochastic layer k (k = 0 is nearest to x).
/// In batched calls each entry is a [B, width] matrix.
using Latent = std::vector<DenseArray>;

/// Shared empty array meaning "no context".
const DenseArray& no_context();

/// p(x, h) = prior(h_top | c) * prod_k p(h_k | h_{k+1}) * p(x | h_1, c).
struct GenerativeModel {
  std::vector<StochasticLayerSpec> latents;  // bottom to top
  std::size_t obs_width = 0;
  std::size_t context_width = 0;
  // Maps the context (width 0 when unconditional, so only the bias acts as
  // the prior logits) to the top-layer probabilities.
  LayeredNet prior;
  // decoders[0]: h_1 (concatenated with c) -> x; decoders[k]: h_{k+1} -> h_k.
  std::vector<LayeredNet> decoders;

  std::size_t num_params() const;
  void get_params(std::span<double> out) const;
  void set_params(std::span<const double> in);
};

/// q(h | x, c) = q(h_1 | c, x) * prod_k q(h_{k+1} | h_k).
struct InferenceModel {
  std::vector<StochasticLayerSpec> latents;  // bottom to top
  std::size_t obs_width = 0;
  std::size_t context_width = 0;
  // encoders[0]: [c | x] -> h_1; encoders[k]: h_k -> h_{k+1}.
  std::vector<LayeredNet> encoders;

  std::size_t num_params() const;
  void get_params(std::span<double> out) const;
  void set_params(std::span<const double> in);
};

struct ModelPair {
  GenerativeModel gen;
  InferenceModel inf;
  std::string architecture;  // canonical spec string it was built from

  std::size_t context_width() const noexcept { return gen.context_width; }
  std::size_t num_theta() const { return gen.num_params(); }
  std::size_t num_phi() const { return inf.num_params(); }

  /// lambda = (theta, phi).
  std::vector<double> get_lambda() const;
  void set_lambda(std::span<const double> lambda);
};

// ---- single-point API ----

double log_joint(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                 const DenseArray& c = no_context());
DenseArray grad_log_joint(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                          const DenseArray& c = no_context());
double log_q(const InferenceModel& inf, const Latent& h, const DenseArray& x,
             const DenseArray& c = no_context());
DenseArray grad_log_q(const InferenceModel& inf, const Latent& h, const DenseArray& x,
                      const DenseArray& c = no_context());
Latent sample_q(const InferenceModel& inf, const DenseArray& x, const DenseArray& c,
                std::mt19937_64& rng);

// ---- batched API: row r of every argument belongs to the same sample ----

std::vector<double> log_joint_rows(const GenerativeModel& gen, const DenseArray& x,
                                   const Latent& h, const DenseArray& c);
std::vector<double> log_q_rows(const InferenceModel& inf, const Latent& h, const DenseArray& x,
                               const DenseArray& c);

/// grad += sum_r weight[r] * d/dtheta log p(x_r, h_r | c_r). Returns the per-row log-joints.
std::vector<double> accumulate_grad_log_joint(const GenerativeModel& gen, const DenseArray& x,
                                              const Latent& h, const DenseArray& c,
                                              std::span<const double> weight,
                                              std::span<double> grad);
/// grad += sum_r weight[r] * d/dphi log q(h_r | x_r, c_r). Returns the per-row log-q values.
std::vector<double> accumulate_grad_log_q(const InferenceModel& inf, const Latent& h,
                                          const DenseArray& x, const DenseArray& c,
                                          std::span<const double> weight, std::span<double> grad);

struct Proposals {
  Latent h;                   // rows ordered point-major: row i * repeats + j
  std::vector<double> log_q;  // log q of each row
};

/// Draws `repeats` ancestral samples from q for every row of x.
Proposals propose(const InferenceModel& inf, const DenseArray& x, const DenseArray& c,
                  std::size_t repeats, std::mt19937_64& rng);

/// Rows of every layer of `h` selected by index.
Latent gather_latent_rows(const Latent& h, std::span<const std::size_t> index);
/// Row `r` of every layer as a batch of one.
Latent latent_row(const Latent& h, std::size_t r);

/// Throws domain_error unless every layer is binary (Bernoulli) or one-hot per group.
void validate_latent(const std::vector<StochasticLayerSpec>& specs, const Latent& h,
                     std::size_t rows);

}  // namespace jsa
