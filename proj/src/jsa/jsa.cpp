#include "jsa/jsa.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "jsa/errors.hpp"

namespace jsa {

namespace {

std::size_t total_width(const std::vector<StochasticLayerSpec>& specs) {
  std::size_t w = 0;
  for (const auto& s : specs) w += s.width;
  return w;
}

DenseArray maybe_repeat(const DenseArray& c, std::size_t times) {
  return c.empty() ? c : repeat_rows(c, times);
}

DenseArray maybe_gather(const DenseArray& c, std::span<const std::size_t> index) {
  return c.empty() ? c : gather_rows(c, index);
}

DenseArray vstack(const DenseArray& a, const DenseArray& b) {
  if (a.cols() != b.cols()) throw shape_error("vstack: column counts differ");
  std::vector<double> v(a.storage());
  v.insert(v.end(), b.storage().begin(), b.storage().end());
  return DenseArray({a.rows() + b.rows(), a.cols()}, std::move(v));
}

Latent vstack(const Latent& a, const Latent& b) {
  Latent out;
  for (std::size_t k = 0; k < a.size(); ++k) out.push_back(vstack(a[k], b[k]));
  return out;
}

void check_batch(const ModelPair& pair, const MiniBatch& batch) {
  if (batch.index.size() != batch.x.rows()) throw shape_error("minibatch index and x rows differ");
  if (batch.x.rows() == 0) throw domain_error("empty minibatch");
  std::unordered_set<std::size_t> seen(batch.index.begin(), batch.index.end());
  if (seen.size() != batch.index.size()) throw domain_error("minibatch indices must be distinct");
  if (pair.context_width() > 0 && batch.c.rows() != batch.x.rows()) {
    throw shape_error("minibatch context rows differ from x rows");
  }
}

void require_finite_grad(const GradEstimate& g) {
  require_finite(g.g_theta, "theta gradient");
  require_finite(g.g_phi, "phi gradient");
}

// Accumulates weighted gradients over the rows of `h` with positive weight.
// point_of_row maps a row of h to its row in the batch.
void weighted_gradients(const ModelPair& pair, const MiniBatch& batch, const Latent& h,
                        const std::vector<double>& weight, const std::vector<std::size_t>& point_of_row,
                        GradEstimate& est) {
  std::vector<std::size_t> rows, points;
  std::vector<double> w;
  for (std::size_t r = 0; r < weight.size(); ++r) {
    if (weight[r] == 0.0) continue;
    rows.push_back(r);
    points.push_back(point_of_row[r]);
    w.push_back(weight[r]);
  }
  const Latent hs = gather_latent_rows(h, rows);
  const DenseArray xs = gather_rows(batch.x, points);
  const DenseArray cs = maybe_gather(batch.c, points);
  est.g_theta.assign(pair.num_theta(), 0.0);
  est.g_phi.assign(pair.num_phi(), 0.0);
  accumulate_grad_log_joint(pair.gen, xs, hs, cs, w, est.g_theta);
  accumulate_grad_log_q(pair.inf, hs, xs, cs, w, est.g_phi);
}

}  // namespace

// ---- LatentCache ----

LatentCache::LatentCache(std::size_t n, std::vector<StochasticLayerSpec> specs)
    : specs_(std::move(specs)), width_(total_width(specs_)), entries_(n) {}

std::size_t LatentCache::filled() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return !e.empty(); }));
}

void LatentCache::check_index(std::size_t i) const {
  if (i >= entries_.size()) {
    throw state_error("cache index " + std::to_string(i) + " out of range (size " +
                      std::to_string(entries_.size()) + ")");
  }
}

bool LatentCache::has(std::size_t i) const {
  check_index(i);
  return !entries_[i].empty();
}

Latent LatentCache::get(std::size_t i) const {
  check_index(i);
  const auto& e = entries_[i];
  if (e.empty()) throw state_error("no cached latent for data point " + std::to_string(i));
  Latent h;
  std::size_t o = 0;
  for (const auto& s : specs_) {
    DenseArray layer({1, s.width});
    for (std::size_t j = 0; j < s.width; ++j) layer[j] = e[o + j];
    o += s.width;
    h.push_back(std::move(layer));
  }
  return h;
}

void LatentCache::put(std::size_t i, const Latent& h, std::size_t row) {
  check_index(i);
  if (h.size() != specs_.size()) throw shape_error("cached latent has the wrong number of layers");
  std::vector<std::uint8_t> e(width_);
  std::size_t o = 0;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    if (h[k].cols() != specs_[k].width || row >= h[k].rows()) {
      throw shape_error("cached latent layer " + std::to_string(k) + " has the wrong shape");
    }
    const auto r = h[k].row(row);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (r[j] != 0.0 && r[j] != 1.0) throw domain_error("cached latent values must be 0 or 1");
      e[o + j] = r[j] != 0.0 ? 1 : 0;
    }
    o += specs_[k].width;
  }
  entries_[i] = std::move(e);
}

void LatentCache::erase(std::size_t i) {
  check_index(i);
  entries_[i].clear();
}

void LatentCache::set_raw(std::size_t i, std::vector<std::uint8_t> bits) {
  check_index(i);
  if (!bits.empty() && bits.size() != width_) throw shape_error("raw cache entry has the wrong width");
  entries_[i] = std::move(bits);
}

// ---- config ----

void JsaConfig::validate() const {
  if (particle_number < 1) throw config_error("particle number must be >= 1");
  if (minibatch_size < 1) throw config_error("minibatch size must be >= 1");
  if (stage1_epochs > total_epochs) throw config_error("stage1 epochs exceed total epochs");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw config_error("learning rate must be positive");
  if (eval_every < 1) throw config_error("eval_every must be >= 1");
  if (!(max_norm > 0.0)) throw config_error("max_norm must be positive");
  if (schedule == Schedule::RobbinsMonro) {
    if (!(rm_t0 >= 1.0)) throw config_error("robbins-monro t0 must be >= 1");
    if (!(rm_alpha > 0.5 && rm_alpha <= 1.0)) throw config_error("robbins-monro alpha must lie in (0.5, 1]");
  }
}

SASchedule JsaConfig::sa_schedule() const {
  if (schedule == Schedule::Constant) return SASchedule::constant(lr);
  return SASchedule::robbins_monro(lr * std::pow(rm_t0, rm_alpha), rm_t0, rm_alpha);
}

std::vector<double> GradEstimate::lambda_gradient() const {
  std::vector<double> g(g_theta);
  g.insert(g.end(), g_phi.begin(), g_phi.end());
  return g;
}

MiniBatch make_batch(const DenseArray& x, const DenseArray& c, std::span<const std::size_t> index) {
  MiniBatch b;
  b.index.assign(index.begin(), index.end());
  b.x = gather_rows(x, index);
  b.c = maybe_gather(c, index);
  return b;
}

// ---- importance weights and MIS ----

std::vector<double> log_importance_weight_rows(const ModelPair& pair, const DenseArray& x,
                                               const Latent& h, const DenseArray& c) {
  std::vector<double> lw = log_joint_rows(pair.gen, x, h, c);
  const std::vector<double> lq = log_q_rows(pair.inf, h, x, c);
  for (std::size_t r = 0; r < lw.size(); ++r) lw[r] -= lq[r];
  return lw;
}

double log_importance_weight(const ModelPair& pair, const DenseArray& x, const Latent& h,
                             const DenseArray& c) {
  return log_joint(pair.gen, x, h, c) - log_q(pair.inf, h, x, c);
}

bool standard_accept(double delta, double u) { return std::log(u) < delta; }

double mis_accept_probability(double delta) { return delta >= 0.0 ? 1.0 : std::exp(delta); }

MisResult mis_step(const ModelPair& pair, const DenseArray& x, const Latent& h_old,
                   const DenseArray& c, std::mt19937_64& rng, const AcceptRule& rule) {
  Latent prop = sample_q(pair.inf, x, c, rng);
  const double delta =
      log_importance_weight(pair, x, prop, c) - log_importance_weight(pair, x, h_old, c);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const bool accept = rule ? rule(delta, u) : standard_accept(delta, u);
  MisResult out;
  out.accepted = accept;
  out.delta = delta;
  out.h = accept ? std::move(prop) : h_old;
  return out;
}

std::size_t mis_chain(const ModelPair& pair, const DenseArray& x, const DenseArray& c, Latent& h,
                      std::size_t steps, std::mt19937_64& rng,
                      const std::function<void(const Latent&, std::size_t)>& visit,
                      const AcceptRule& rule) {
  const DenseArray xr = x.rank() == 2 ? x : DenseArray({1, x.size()}, x.storage());
  const DenseArray cr = c.empty() || c.rank() == 2 ? c : DenseArray({1, c.size()}, c.storage());
  Latent cur;
  for (const auto& layer : h) cur.push_back(layer.rank() == 2 ? layer : DenseArray({1, layer.size()}, layer.storage()));
  double cur_lw = log_importance_weight_rows(pair, xr, cur, cr)[0];

  constexpr std::size_t kBlock = 4096;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t accepted = 0;
  for (std::size_t done = 0; done < steps;) {
    const std::size_t B = std::min(kBlock, steps - done);
    const Proposals P = propose(pair.inf, xr, cr, B, rng);
    std::vector<double> lw = log_joint_rows(pair.gen, repeat_rows(xr, B), P.h, maybe_repeat(cr, B));
    const Latent* where = &cur;
    std::size_t row = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const double prop_lw = lw[b] - P.log_q[b];
      const double u = unif(rng);
      const double delta = prop_lw - cur_lw;
      if (rule ? rule(delta, u) : standard_accept(delta, u)) {
        where = &P.h;
        row = b;
        cur_lw = prop_lw;
        ++accepted;
      }
      if (visit) visit(*where, row);
    }
    if (where == &P.h) cur = latent_row(P.h, row);
    done += B;
  }
  h = std::move(cur);
  return accepted;
}

// ---- minibatch estimators ----

GradEstimate jsa_minibatch_update(const ModelPair& pair, LatentCache& cache, const MiniBatch& batch,
                                  const JsaConfig& config, Stage stage, std::mt19937_64& rng,
                                  const UpdateOptions& options) {
  check_batch(pair, batch);
  const std::size_t m = batch.x.rows();
  const std::size_t K = config.particle_number;
  if (K < 1) throw config_error("particle number must be >= 1");
  for (std::size_t i : batch.index) {
    if (i >= cache.size()) throw state_error("data point " + std::to_string(i) + " is outside the cache");
  }
  const bool from_cache = stage == Stage::Cache;

  // Stage I draws one extra proposal per point that serves as the start state.
  const std::size_t R = from_cache ? K : K + 1;
  const Proposals P = propose(pair.inf, batch.x, batch.c, R, rng);
  std::vector<double> lw = log_joint_rows(pair.gen, repeat_rows(batch.x, R), P.h, maybe_repeat(batch.c, R));
  for (std::size_t r = 0; r < lw.size(); ++r) lw[r] -= P.log_q[r];

  Latent cand = P.h;
  std::vector<std::size_t> point_of_row(m * R);
  for (std::size_t r = 0; r < m * R; ++r) point_of_row[r] = r / R;
  if (from_cache) {
    Latent old;
    for (const auto& spec : pair.gen.latents) old.emplace_back(std::vector<std::size_t>{m, spec.width});
    for (std::size_t i = 0; i < m; ++i) {
      const Latent h = cache.get(batch.index[i]);
      for (std::size_t k = 0; k < old.size(); ++k) std::copy(h[k].values().begin(), h[k].values().end(), old[k].row(i).begin());
    }
    const std::vector<double> old_lw = log_importance_weight_rows(pair, batch.x, old, batch.c);
    cand = vstack(cand, old);
    lw.insert(lw.end(), old_lw.begin(), old_lw.end());
    for (std::size_t i = 0; i < m; ++i) point_of_row.push_back(i);
  }

  GradEstimate est;
  est.proposal_count = m * K;
  std::vector<double> weight(point_of_row.size(), 0.0);
  std::vector<std::size_t> final_row(m);
  const double w_visit = 1.0 / static_cast<double>(m * K);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t cur = from_cache ? m * K + i : i * R;
    const std::size_t first = from_cache ? i * K : i * R + 1;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t prop = first + k;
      const double delta = lw[prop] - lw[cur];
      const double u = unif(rng);
      if (options.accept ? options.accept(delta, u) : standard_accept(delta, u)) {
        cur = prop;
        ++est.accept_count;
      }
      weight[cur] += w_visit;
    }
    final_row[i] = cur;
  }

  weighted_gradients(pair, batch, cand, weight, point_of_row, est);
  require_finite_grad(est);
  if (!options.probe) {
    for (std::size_t i = 0; i < m; ++i) cache.put(batch.index[i], cand, final_row[i]);
  }
  return est;
}

GradEstimate rws_minibatch_update(const ModelPair& pair, const MiniBatch& batch,
                                  std::size_t n_particles, std::mt19937_64& rng) {
  check_batch(pair, batch);
  if (n_particles < 2) throw domain_error("RWS needs at least 2 particles");
  const std::size_t m = batch.x.rows(), R = n_particles;
  const Proposals P = propose(pair.inf, batch.x, batch.c, R, rng);
  std::vector<double> lw = log_joint_rows(pair.gen, repeat_rows(batch.x, R), P.h, maybe_repeat(batch.c, R));
  for (std::size_t r = 0; r < lw.size(); ++r) lw[r] -= P.log_q[r];

  std::vector<double> weight(m * R);
  std::vector<std::size_t> point_of_row(m * R);
  for (std::size_t i = 0; i < m; ++i) {
    const std::span<const double> li(lw.data() + i * R, R);
    const double lse = log_sum_exp(li);
    for (std::size_t j = 0; j < R; ++j) {
      weight[i * R + j] = std::exp(li[j] - lse) / static_cast<double>(m);
      point_of_row[i * R + j] = i;
    }
  }
  GradEstimate est;
  est.accept_count = est.proposal_count = m * R;
  weighted_gradients(pair, batch, P.h, weight, point_of_row, est);
  require_finite_grad(est);
  return est;
}

void initialize_cache(const ModelPair& pair, LatentCache& cache, const DenseArray& x,
                      const DenseArray& c, std::span<const std::size_t> index,
                      std::mt19937_64& rng) {
  std::vector<std::size_t> missing;
  for (std::size_t i : index) {
    if (!cache.has(i)) missing.push_back(i);
  }
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < missing.size(); s += kChunk) {
    const std::span<const std::size_t> part(missing.data() + s, std::min(kChunk, missing.size() - s));
    const Proposals P = propose(pair.inf, gather_rows(x, part), maybe_gather(c, part), 1, rng);
    for (std::size_t r = 0; r < part.size(); ++r) cache.put(part[r], P.h, r);
  }
}

// ---- training loop ----

TrainState make_train_state(ModelPair pair, std::size_t n, const JsaConfig& config) {
  TrainState st;
  st.cache = LatentCache(n, pair.gen.latents);
  st.adam = AdamState::for_params(pair.num_theta() + pair.num_phi(), config.lr);
  st.rng.seed(config.seed);
  st.pair = std::move(pair);
  return st;
}

std::vector<char> phi_only_mask(const ModelPair& pair) {
  std::vector<char> mask(pair.num_theta() + pair.num_phi(), 1);
  std::fill_n(mask.begin(), pair.num_theta(), 0);
  return mask;
}

TrainResult train(TrainState& state, const DenseArray& x, const DenseArray& c,
                  const JsaConfig& config, const TrainHooks& hooks, const TrainOptions& options) {
  config.validate();
  const std::size_t n = x.rows();
  if (n == 0) throw domain_error("training set is empty");
  if (state.cache.size() != n) throw state_error("cache size does not match the training set");
  const std::size_t dim = state.pair.num_theta() + state.pair.num_phi();
  if (!options.trainable.empty() && options.trainable.size() != dim) {
    throw shape_error("trainable mask length does not match lambda");
  }
  if (options.algorithm == Algorithm::Rws && config.particle_number < 2) {
    throw config_error("RWS needs particle number >= 2");
  }
  if (!state.adam) state.adam = AdamState::for_params(dim, config.lr);

  const SASchedule schedule = config.sa_schedule();
  std::vector<double> lambda = state.pair.get_lambda();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!hooks.record_time) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  TrainResult result;
  auto emit = [&](EpochRecord rec) {
    if (hooks.on_record) hooks.on_record(rec);
    result.records.push_back(std::move(rec));
  };

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t epoch = state.epoch + 1; epoch <= config.total_epochs; ++epoch) {
    const Stage stage = epoch <= config.stage1_epochs ? Stage::NoCache : Stage::Cache;
    if (stage == Stage::Cache && options.algorithm == Algorithm::Jsa && state.cache.filled() < n) {
      // Chains for points never visited in stage I start from a q proposal.
      initialize_cache(state.pair, state.cache, x, c, order, state.rng);
    }
    state.stage = stage;
    // Restart from the identity so a resumed run draws the same permutation.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);

    std::size_t accepted = 0, proposed = 0;
    for (std::size_t s = 0; s < n; s += config.minibatch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(config.minibatch_size, n - s));
      const MiniBatch batch = make_batch(x, c, idx);
      try {
        const GradEstimate g =
            options.algorithm == Algorithm::Jsa
                ? jsa_minibatch_update(state.pair, state.cache, batch, config, stage, state.rng,
                                       {false, options.accept})
                : rws_minibatch_update(state.pair, batch, config.particle_number, state.rng);
        std::vector<double> f = g.lambda_gradient();
        if (!options.trainable.empty()) {
          for (std::size_t i = 0; i < dim; ++i) {
            if (!options.trainable[i]) f[i] = 0.0;
          }
        }
        sa_apply_update(lambda, state.t, state.adam, f, schedule, config.max_norm);
        state.pair.set_lambda(lambda);
        accepted += g.accept_count;
        proposed += g.proposal_count;
      } catch (const numeric_error& e) {
        result.aborted = true;
        result.abort_reason = std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")";
        return result;
      }
      if (hooks.after_update) hooks.after_update(state);
    }

    const double train_nll = hooks.train_nll ? hooks.train_nll(state.pair, epoch) : nan;
    emit({epoch, "train", train_nll,
          proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : nan, elapsed()});

    if (hooks.valid_nll && (epoch % config.eval_every == 0 || epoch == config.total_epochs)) {
      const double v = hooks.valid_nll(state.pair, epoch);
      if (state.best_lambda.empty() || v < state.best_valid) {
        state.best_lambda = lambda;
        state.best_valid = v;
        state.best_epoch = epoch;
      }
      emit({epoch, "valid", v, nan, elapsed()});
    }
    state.epoch = epoch;
    if (hooks.after_epoch) hooks.after_epoch(state);
  }
  return result;
}

}  // namespace jsa
