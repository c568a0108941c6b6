#pragma once

// Generic Robbins-Monro stochastic approximation: a Markov kernel moves the
// auxiliary state z, then lambda moves along a noisy measurement F(lambda, z).

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "jsa/errors.hpp"
#include "jsa/net.hpp"

namespace jsa {

enum class Stage { NoCache, Cache };

inline const char* stage_name(Stage s) { return s == Stage::NoCache ? "no-cache" : "cache"; }

struct SASchedule {
  enum class Mode { Constant, RobbinsMonro };
  Mode mode = Mode::Constant;
  double a = 3e-4;
  double t0 = 0.0;
  double alpha = 1.0;

  static SASchedule constant(double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw domain_error("constant step size must be positive");
    return {Mode::Constant, gamma, 0.0, 1.0};
  }

  /// gamma_t = a / (t0 + t)^alpha. alpha in (0.5, 1] keeps sum gamma infinite
  /// and sum gamma^2 finite.
  static SASchedule robbins_monro(double a, double t0, double alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw domain_error("robbins-monro: a must be positive");
    if (!(t0 >= 0.0) || !std::isfinite(t0)) throw domain_error("robbins-monro: t0 must be >= 0");
    if (!(alpha > 0.5 && alpha <= 1.0)) throw domain_error("robbins-monro: alpha must lie in (0.5, 1]");
    return {Mode::RobbinsMonro, a, t0, alpha};
  }

  /// Step size of iteration t (t starts at 1).
  double gamma(std::size_t t) const {
    if (mode == Mode::Constant) return a;
    return a / std::pow(t0 + static_cast<double>(t), alpha);
  }
};

template <class Z>
struct SAState {
  std::vector<double> lambda;
  Z z{};
  std::size_t t = 0;
  Stage stage = Stage::NoCache;
  // When present, the update is an Adam ascent step with lr = gamma_t instead
  // of the plain lambda += gamma_t * F.
  std::optional<AdamState> optimizer;
};

/// Applies one parameter update with the measurement `f` and advances t.
/// Nothing is modified when `f` is non-finite or the new lambda would leave
/// the ball of radius `max_norm`; both cases throw numeric_error.
inline void sa_apply_update(std::vector<double>& lambda, std::size_t& t,
                            std::optional<AdamState>& optimizer, std::span<const double> f,
                            const SASchedule& schedule,
                            double max_norm = std::numeric_limits<double>::infinity()) {
  if (f.size() != lambda.size()) {
    throw shape_error("SA measurement has " + std::to_string(f.size()) + " entries, lambda has " +
                      std::to_string(lambda.size()));
  }
  const std::size_t next = t + 1;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!std::isfinite(f[i])) {
      std::ostringstream msg;
      msg << "non-finite SA measurement at iteration t=" << next << " (component " << i << ")";
      throw numeric_error(msg.str());
    }
  }
  const double gamma = schedule.gamma(next);
  std::vector<double> candidate = lambda;
  std::optional<AdamState> opt = optimizer;
  if (opt) {
    std::vector<double> descent(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) descent[i] = -f[i];
    opt->lr = gamma;
    adam_step(candidate, descent, *opt);
  } else {
    for (std::size_t i = 0; i < f.size(); ++i) candidate[i] += gamma * f[i];
  }
  double sq = 0.0;
  for (double v : candidate) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm) || norm > max_norm) {
    std::ostringstream msg;
    msg << "SA diverged at iteration t=" << next << ": |lambda| = " << norm << " exceeds bound "
        << max_norm;
    throw numeric_error(msg.str());
  }
  lambda.swap(candidate);
  optimizer = std::move(opt);
  t = next;
}

/// One step of the basic scheme: z <- kernel(z, lambda), then
/// lambda <- lambda + gamma_t F(lambda, z).
/// Kernel: Z(const Z&, std::span<const double>, Rng&). F: std::vector<double>(std::span<const double>, const Z&).
template <class Z, class Kernel, class Measure, class Rng>
SAState<Z>& sa_iterate(SAState<Z>& state, Kernel&& kernel, Measure&& F, const SASchedule& schedule,
                       Rng& rng, double max_norm = std::numeric_limits<double>::infinity()) {
  const std::span<const double> lam(state.lambda);
  Z z = kernel(state.z, lam, rng);
  const std::vector<double> f = F(lam, z);
  sa_apply_update(state.lambda, state.t, state.optimizer, f, schedule, max_norm);
  state.z = std::move(z);
  return state;
}

/// K successive kernel moves from the current z, then one update with the
/// average of F over the K visited states (all evaluated at the old lambda).
template <class Z, class Kernel, class Measure, class Rng>
SAState<Z>& multiple_moves(SAState<Z>& state, Kernel&& kernel, Measure&& F, std::size_t K,
                           const SASchedule& schedule, Rng& rng,
                           double max_norm = std::numeric_limits<double>::infinity()) {
  if (K == 0) throw domain_error("multiple_moves needs K >= 1");
  const std::span<const double> lam(state.lambda);
  Z z = state.z;
  std::vector<double> sum;
  for (std::size_t k = 0; k < K; ++k) {
    z = kernel(z, lam, rng);
    const std::vector<double> f = F(lam, z);
    if (sum.empty()) {
      sum = f;
    } else {
      if (f.size() != sum.size()) throw shape_error("SA measurement changed length between moves");
      for (std::size_t i = 0; i < f.size(); ++i) sum[i] += f[i];
    }
  }
  const double inv = static_cast<double>(K);
  for (double& v : sum) v /= inv;
  sa_apply_update(state.lambda, state.t, state.optimizer, sum, schedule, max_norm);
  state.z = std::move(z);
  return state;
}

}  // namespace jsa
