#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "jsa/sa.hpp"

namespace jsa::testing {

// Exact sampler for the mean-finding toy: z ~ N(mean, 1) regardless of the
// previous state, and F(lambda, z) = z - lambda.
struct GaussianDraw {
  double mean;
  double operator()(const double&, std::span<const double>, std::mt19937_64& rng) const {
    std::normal_distribution<double> n(mean, 1.0);
    return n(rng);
  }
};

inline std::vector<double> mean_residual(std::span<const double> lambda, const double& z) {
  return {z - lambda[0]};
}

// Mean absolute error |lambda_T - target| over `reps` independent runs of
// the toy with gamma_t = 1/t, recorded at each checkpoint T.
inline std::vector<double> mean_finding_errors(const std::vector<std::size_t>& checkpoints,
                                               std::size_t reps, double target, unsigned seed) {
  std::vector<double> err(checkpoints.size(), 0.0);
  const auto schedule = SASchedule::robbins_monro(1.0, 0.0, 1.0);
  for (std::size_t r = 0; r < reps; ++r) {
    std::mt19937_64 rng(seed + r);
    SAState<double> s;
    s.lambda = {0.0};
    std::size_t next = 0;
    while (next < checkpoints.size()) {
      sa_iterate(s, GaussianDraw{target}, mean_residual, schedule, rng);
      if (s.t == checkpoints[next]) err[next++] += std::abs(s.lambda[0] - target);
    }
  }
  for (double& e : err) e /= static_cast<double>(reps);
  return err;
}

// Least-squares slope of log10(err) against log10(T).
inline double log_log_slope(const std::vector<std::size_t>& ts, const std::vector<double>& err) {
  double mx = 0, my = 0;
  const double n = static_cast<double>(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mx += std::log10(static_cast<double>(ts[i])) / n;
    my += std::log10(err[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double dx = std::log10(static_cast<double>(ts[i])) - mx;
    sxy += dx * (std::log10(err[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace jsa::testing
