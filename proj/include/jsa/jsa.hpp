#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jsa/dense_array.hpp"
#include "jsa/models.hpp"
#include "jsa/net.hpp"
#include "jsa/sa.hpp"

namespace jsa {

/// One persistent latent sample per training point. Entries are stored as
/// bytes (all latent values are 0/1) and are independent per index, so
/// distinct indices may be written concurrently.
class LatentCache {
 public:
  LatentCache() = default;
  LatentCache(std::size_t n, std::vector<StochasticLayerSpec> specs);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t filled() const noexcept;
  const std::vector<StochasticLayerSpec>& specs() const noexcept { return specs_; }
  std::size_t entry_width() const noexcept { return width_; }

  bool has(std::size_t i) const;
  /// Rank-2 layers with one row. Throws state_error when absent.
  Latent get(std::size_t i) const;
  /// Stores row `row` of a batched latent under index i.
  void put(std::size_t i, const Latent& h, std::size_t row = 0);
  void erase(std::size_t i);

  /// Raw access for serialization: empty vector means "no entry".
  const std::vector<std::uint8_t>& raw(std::size_t i) const { return entries_.at(i); }
  void set_raw(std::size_t i, std::vector<std::uint8_t> bits);

  friend bool operator==(const LatentCache&, const LatentCache&) = default;

 private:
  void check_index(std::size_t i) const;

  std::vector<StochasticLayerSpec> specs_;
  std::size_t width_ = 0;
  std::vector<std::vector<std::uint8_t>> entries_;
};

enum class Schedule { Constant, RobbinsMonro };

struct JsaConfig {
  std::size_t particle_number = 2;  // K
  std::size_t minibatch_size = 50;  // m
  std::size_t stage1_epochs = 0;
  std::size_t total_epochs = 1;
  double lr = 3e-4;
  std::uint64_t seed = 1;
  std::size_t eval_every = 5;
  // Adam learning rate: constant lr, or lr * (t0 / (t0 + t))^alpha.
  Schedule schedule = Schedule::Constant;
  double rm_t0 = 1000.0;
  double rm_alpha = 1.0;
  // Abort when |lambda| exceeds this.
  double max_norm = 1e6;

  /// Throws config_error on an invalid combination.
  void validate() const;
  SASchedule sa_schedule() const;
};

struct GradEstimate {
  std::vector<double> g_theta;
  std::vector<double> g_phi;
  std::size_t accept_count = 0;
  std::size_t proposal_count = 0;

  double accept_rate() const {
    return proposal_count == 0 ? 0.0 : static_cast<double>(accept_count) / proposal_count;
  }
  /// (g_theta, g_phi) concatenated in lambda order.
  std::vector<double> lambda_gradient() const;
};

/// Rows of a dataset selected for one update.
struct MiniBatch {
  std::vector<std::size_t> index;
  DenseArray x;  // [m, obs]
  DenseArray c;  // [m, ctx], or empty for unconditional models
};

MiniBatch make_batch(const DenseArray& x, const DenseArray& c, std::span<const std::size_t> index);

/// log p(x, h) - log q(h | x): the importance weight up to the constant log p(x).
double log_importance_weight(const ModelPair& pair, const DenseArray& x, const Latent& h,
                             const DenseArray& c = no_context());
std::vector<double> log_importance_weight_rows(const ModelPair& pair, const DenseArray& x,
                                               const Latent& h, const DenseArray& c);

/// Decides a Metropolis acceptance from delta = log w(new) - log w(old) and
/// u ~ U(0,1). An empty rule means the standard one, log u < delta.
using AcceptRule = std::function<bool(double delta, double u)>;

bool standard_accept(double delta, double u);
/// min(1, exp(delta)).
double mis_accept_probability(double delta);

struct MisResult {
  Latent h;  // rank-1 layers
  bool accepted = false;
  double delta = 0.0;
};

/// One Metropolis independence step with q(h | x) as proposal.
MisResult mis_step(const ModelPair& pair, const DenseArray& x, const Latent& h_old,
                   const DenseArray& c, std::mt19937_64& rng, const AcceptRule& rule = {});

/// Runs `steps` MIS moves for one point starting from h (a one-row latent,
/// updated in place). Proposals are drawn in blocks; visit(states, row) is
/// called for every post-move state. Returns the number of accepted moves.
std::size_t mis_chain(const ModelPair& pair, const DenseArray& x, const DenseArray& c, Latent& h,
                      std::size_t steps, std::mt19937_64& rng,
                      const std::function<void(const Latent&, std::size_t)>& visit,
                      const AcceptRule& rule = {});

struct UpdateOptions {
  // Probe mode computes the estimate but writes nothing to the cache.
  bool probe = false;
  AcceptRule accept;
};

/// Gradient estimate for one minibatch. Stage I starts each chain from a
/// fresh proposal; stage II starts it from the cache. Each point then takes
/// K MIS moves and the gradients are averaged over all m*K post-move states.
/// The final state of every chain is written to the cache (both stages).
GradEstimate jsa_minibatch_update(const ModelPair& pair, LatentCache& cache, const MiniBatch& batch,
                                  const JsaConfig& config, Stage stage, std::mt19937_64& rng,
                                  const UpdateOptions& options = {});

/// Reweighted wake-sleep estimate, wake-phase q update only: self-normalized
/// importance weights over n_particles proposals per point.
GradEstimate rws_minibatch_update(const ModelPair& pair, const MiniBatch& batch,
                                  std::size_t n_particles, std::mt19937_64& rng);

/// Draws one q proposal for every listed index that has no cache entry.
void initialize_cache(const ModelPair& pair, LatentCache& cache, const DenseArray& x,
                      const DenseArray& c, std::span<const std::size_t> index,
                      std::mt19937_64& rng);

enum class Algorithm { Jsa, Rws };

/// Everything needed to resume training exactly.
struct TrainState {
  ModelPair pair;
  LatentCache cache;
  std::optional<AdamState> adam;  // always engaged
  std::size_t epoch = 0;  // completed epochs
  std::size_t t = 0;      // completed updates
  Stage stage = Stage::NoCache;
  std::mt19937_64 rng;
  std::vector<double> best_lambda;  // empty until the first validation
  double best_valid = 0.0;
  std::size_t best_epoch = 0;
};

TrainState make_train_state(ModelPair pair, std::size_t n, const JsaConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;         // "train" or "valid"
  double nll = 0.0;          // NaN when not measured
  double accept_rate = 0.0;  // NaN for rows without sampling
  double seconds = 0.0;
};

struct TrainHooks {
  // Train NLL proxy reported every epoch (optional).
  std::function<double(const ModelPair&, std::size_t epoch)> train_nll;
  // Validation NLL, called every eval_every epochs and after the last one.
  std::function<double(const ModelPair&, std::size_t epoch)> valid_nll;
  // Called after every update with the new update count (optional).
  std::function<void(const TrainState&)> after_update;
  std::function<void(const EpochRecord&)> on_record;
  std::function<void(const TrainState&)> after_epoch;
  bool record_time = true;
};

struct TrainOptions {
  Algorithm algorithm = Algorithm::Jsa;
  // Per-coordinate mask over lambda; zero entries are frozen. Empty = all trainable.
  std::vector<char> trainable;
  AcceptRule accept;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

/// Runs epochs state.epoch+1 .. config.total_epochs over the rows of x. On a
/// numeric failure the state is left at the last good update and the result
/// is marked aborted.
TrainResult train(TrainState& state, const DenseArray& x, const DenseArray& c,
                  const JsaConfig& config, const TrainHooks& hooks = {},
                  const TrainOptions& options = {});

/// Mask freezing the generative parameters (only phi trains).
std::vector<char> phi_only_mask(const ModelPair& pair);

}  // namespace jsa
