#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "jsa/dense_array.hpp"
#include "jsa/jsa.hpp"
#include "jsa/models.hpp"

namespace jsa {

inline constexpr std::size_t kMaxSupport = std::size_t{1} << 16;

/// Every latent configuration of a model, in lexicographic order over the
/// variable sequence (layer 0 first; within a Bernoulli layer bit 0 first;
/// within a categorical layer variable 0 first), earlier variables most
/// significant. Refuses supports larger than the cap.
class EnumerableSupport {
 public:
  explicit EnumerableSupport(std::vector<StochasticLayerSpec> specs, std::size_t cap = kMaxSupport);

  std::size_t size() const noexcept { return size_; }
  const std::vector<StochasticLayerSpec>& specs() const noexcept { return specs_; }
  /// All configurations as a batched latent; row r is configuration r.
  const Latent& all() const noexcept { return all_; }
  Latent at(std::size_t r) const { return latent_row(all_, r); }
  /// Position of row `row` of h in the enumeration order.
  std::size_t index_of(const Latent& h, std::size_t row = 0) const;

 private:
  std::vector<StochasticLayerSpec> specs_;
  std::vector<std::size_t> radix_;  // one entry per discrete variable
  std::size_t size_ = 0;
  Latent all_;
};

/// log p(x, h) for every h of the support.
std::vector<double> log_joint_table(const GenerativeModel& gen, const EnumerableSupport& support,
                                    const DenseArray& x, const DenseArray& c = no_context());
/// log q(h | x) for every h of the support.
std::vector<double> log_q_table(const InferenceModel& inf, const EnumerableSupport& support,
                                const DenseArray& x, const DenseArray& c = no_context());

/// log p(x) by summing the joint over the full latent support.
double exact_log_likelihood(const GenerativeModel& gen, const DenseArray& x,
                            const DenseArray& c = no_context());
/// p(h | x) over the support, in enumeration order.
std::vector<double> exact_posterior(const GenerativeModel& gen, const DenseArray& x,
                                    const DenseArray& c = no_context());
/// KL[p(h | x) || q(h | x)].
double inclusive_kl_exact(const ModelPair& pair, const DenseArray& x,
                          const DenseArray& c = no_context());

/// E_{p(h|x)}[grad_theta log p(x, h)].
std::vector<double> posterior_mean_grad_log_joint(const GenerativeModel& gen, const DenseArray& x,
                                                  const DenseArray& c = no_context());
/// E_{p(h|x)}[grad_phi log q(h | x)].
std::vector<double> posterior_mean_grad_log_q(const ModelPair& pair, const DenseArray& x,
                                              const DenseArray& c = no_context());

/// Largest relative deviation between the posterior-averaged score and the
/// central finite-difference gradient of exact_log_likelihood.
double fisher_identity_check(const GenerativeModel& gen, const DenseArray& x,
                             const DenseArray& c = no_context(), double eps = 1e-5);

/// Importance-sampling NLL of one point with n_samples proposals from q.
double estimate_nll(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                    std::size_t n_samples, std::mt19937_64& rng);

/// Per-row IS-NLL. Row i draws from its own stream derived from (seed, i), so
/// results do not depend on thread count or evaluation order.
std::vector<double> estimate_nll_rows(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                                      std::size_t n_samples, std::uint64_t seed);
double mean_estimated_nll(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                          std::size_t n_samples, std::uint64_t seed);
/// Mean exact NLL over the rows of x.
double mean_exact_nll(const GenerativeModel& gen, const DenseArray& x, const DenseArray& c);

/// Independent stream seed for item i of a run seeded with `base`.
std::uint64_t derived_seed(std::uint64_t base, std::uint64_t i);

struct VarianceReport {
  double log_sum_var_theta = 0.0;  // -inf when every variance is zero
  double log_sum_var_phi = 0.0;
  std::size_t reps = 0;
};

/// Calls `update` reps times and reports log of the summed per-parameter
/// sample variance, separately for theta and phi.
VarianceReport grad_variance(const std::function<GradEstimate(std::mt19937_64&)>& update,
                             std::size_t reps, std::mt19937_64& rng);

}  // namespace jsa
