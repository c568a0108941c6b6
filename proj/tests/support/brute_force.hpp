#pragma once

// Brute-force helpers for tests. Deliberately naive and independent of the
// library's enumeration code in eval.

#include <cmath>
#include <vector>

#include "jsa/models.hpp"

namespace jsa::testing {

inline std::vector<DenseArray> all_layer_values(const StochasticLayerSpec& s) {
  std::vector<DenseArray> out;
  if (s.kind == LatentKind::Bernoulli) {
    for (std::size_t code = 0; code < (std::size_t{1} << s.width); ++code) {
      DenseArray v({s.width});
      for (std::size_t j = 0; j < s.width; ++j) v[j] = (code >> j) & 1u ? 1.0 : 0.0;
      out.push_back(v);
    }
  } else {
    std::size_t total = 1;
    for (std::size_t i = 0; i < s.n_vars; ++i) total *= s.n_categories;
    for (std::size_t code = 0; code < total; ++code) {
      DenseArray v({s.width});
      std::size_t rest = code;
      for (std::size_t i = 0; i < s.n_vars; ++i) {
        v[i * s.n_categories + rest % s.n_categories] = 1.0;
        rest /= s.n_categories;
      }
      out.push_back(v);
    }
  }
  return out;
}

inline std::vector<Latent> all_latents(const std::vector<StochasticLayerSpec>& specs) {
  std::vector<Latent> out{Latent{}};
  for (const auto& s : specs) {
    std::vector<Latent> next;
    for (const auto& prefix : out) {
      for (const auto& v : all_layer_values(s)) {
        Latent h = prefix;
        h.push_back(v);
        next.push_back(h);
      }
    }
    out = std::move(next);
  }
  return out;
}

inline std::vector<DenseArray> all_binary_vectors(std::size_t width) {
  return all_layer_values(StochasticLayerSpec::bernoulli(width));
}

inline DenseArray random_binary(std::size_t width, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.5);
  DenseArray v({width});
  for (double& x : v.storage()) x = b(rng) ? 1.0 : 0.0;
  return v;
}

inline double brute_log_marginal(const GenerativeModel& gen, const DenseArray& x,
                                 const DenseArray& c = no_context()) {
  double s = 0.0;
  for (const auto& h : all_latents(gen.latents)) s += std::exp(log_joint(gen, x, h, c));
  return std::log(s);
}

// Random parameters with a larger scale than the default init so that tiny
// models have non-trivial posteriors.
inline void randomize(ModelPair& pair, std::mt19937_64& rng, double scale = 1.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  auto lambda = pair.get_lambda();
  for (double& v : lambda) v = u(rng);
  pair.set_lambda(lambda);
}

}  // namespace jsa::testing
