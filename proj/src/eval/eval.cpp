#include "jsa/eval.hpp"

#include <cmath>
#include <exception>
#include <limits>

#include "jsa/errors.hpp"

namespace jsa {

namespace {

DenseArray as_row(const DenseArray& a) {
  if (a.empty() || a.rank() == 2) return a;
  return DenseArray({1, a.size()}, a.storage());
}

DenseArray repeat_or_empty(const DenseArray& c, std::size_t times) {
  return c.empty() ? c : repeat_rows(as_row(c), times);
}

DenseArray row_or_empty(const DenseArray& c, std::size_t r) {
  if (c.empty()) return c;
  const std::size_t idx[1] = {r};
  return gather_rows(c, idx);
}

std::vector<double> normalized(const std::vector<double>& logs) {
  const double lse = log_sum_exp(logs);
  std::vector<double> p(logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) p[i] = std::exp(logs[i] - lse);
  return p;
}

}  // namespace

EnumerableSupport::EnumerableSupport(std::vector<StochasticLayerSpec> specs, std::size_t cap)
    : specs_(std::move(specs)) {
  double log2_size = 0.0;
  for (const auto& s : specs_) log2_size += s.log2_support();
  if (log2_size > std::log2(static_cast<double>(cap)) + 1e-9) {
    throw capability_error("latent support of 2^" + std::to_string(log2_size) +
                           " configurations exceeds the enumeration cap of " + std::to_string(cap));
  }
  for (const auto& s : specs_) {
    if (s.kind == LatentKind::Bernoulli) {
      radix_.insert(radix_.end(), s.width, 2);
    } else {
      radix_.insert(radix_.end(), s.n_vars, s.n_categories);
    }
  }
  size_ = 1;
  for (std::size_t r : radix_) size_ *= r;

  for (const auto& s : specs_) all_.emplace_back(std::vector<std::size_t>{size_, s.width});
  std::vector<std::size_t> digit(radix_.size());
  for (std::size_t code = 0; code < size_; ++code) {
    std::size_t rest = code;
    for (std::size_t v = radix_.size(); v-- > 0;) {
      digit[v] = rest % radix_[v];
      rest /= radix_[v];
    }
    std::size_t v = 0;
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      auto row = all_[k].row(code);
      if (specs_[k].kind == LatentKind::Bernoulli) {
        for (std::size_t j = 0; j < specs_[k].width; ++j) row[j] = static_cast<double>(digit[v++]);
      } else {
        for (std::size_t g = 0; g < specs_[k].n_vars; ++g) row[g * specs_[k].n_categories + digit[v++]] = 1.0;
      }
    }
  }
}

std::size_t EnumerableSupport::index_of(const Latent& h, std::size_t row) const {
  if (h.size() != specs_.size()) throw shape_error("latent has the wrong number of layers");
  std::size_t code = 0;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    const auto& s = specs_[k];
    if (h[k].cols() != s.width || row >= h[k].rows()) throw shape_error("latent layer shape mismatch");
    const auto r = h[k].row(row);
    if (s.kind == LatentKind::Bernoulli) {
      for (std::size_t j = 0; j < s.width; ++j) code = code * 2 + (r[j] != 0.0 ? 1 : 0);
    } else {
      for (std::size_t g = 0; g < s.n_vars; ++g) {
        std::size_t pick = 0;
        for (std::size_t j = 0; j < s.n_categories; ++j) {
          if (r[g * s.n_categories + j] != 0.0) pick = j;
        }
        code = code * s.n_categories + pick;
      }
    }
  }
  return code;
}

std::vector<double> log_joint_table(const GenerativeModel& gen, const EnumerableSupport& support,
                                    const DenseArray& x, const DenseArray& c) {
  const std::size_t n = support.size();
  return log_joint_rows(gen, repeat_rows(as_row(x), n), support.all(), repeat_or_empty(c, n));
}

std::vector<double> log_q_table(const InferenceModel& inf, const EnumerableSupport& support,
                                const DenseArray& x, const DenseArray& c) {
  const std::size_t n = support.size();
  return log_q_rows(inf, support.all(), repeat_rows(as_row(x), n), repeat_or_empty(c, n));
}

double exact_log_likelihood(const GenerativeModel& gen, const DenseArray& x, const DenseArray& c) {
  const EnumerableSupport support(gen.latents);
  return log_sum_exp(log_joint_table(gen, support, x, c));
}

std::vector<double> exact_posterior(const GenerativeModel& gen, const DenseArray& x,
                                    const DenseArray& c) {
  const EnumerableSupport support(gen.latents);
  return normalized(log_joint_table(gen, support, x, c));
}

double inclusive_kl_exact(const ModelPair& pair, const DenseArray& x, const DenseArray& c) {
  const EnumerableSupport support(pair.gen.latents);
  const std::vector<double> lj = log_joint_table(pair.gen, support, x, c);
  const std::vector<double> lq = log_q_table(pair.inf, support, x, c);
  const double lse = log_sum_exp(lj);
  double kl = 0.0;
  for (std::size_t i = 0; i < lj.size(); ++i) {
    const double lp = lj[i] - lse;
    const double p = std::exp(lp);
    if (p > 0.0) kl += p * (lp - lq[i]);
  }
  return kl;
}

std::vector<double> posterior_mean_grad_log_joint(const GenerativeModel& gen, const DenseArray& x,
                                                  const DenseArray& c) {
  const EnumerableSupport support(gen.latents);
  const std::size_t n = support.size();
  const DenseArray xr = repeat_rows(as_row(x), n);
  const DenseArray cr = repeat_or_empty(c, n);
  const std::vector<double> post = normalized(log_joint_rows(gen, xr, support.all(), cr));
  std::vector<double> g(gen.num_params(), 0.0);
  accumulate_grad_log_joint(gen, xr, support.all(), cr, post, g);
  return g;
}

std::vector<double> posterior_mean_grad_log_q(const ModelPair& pair, const DenseArray& x,
                                              const DenseArray& c) {
  const EnumerableSupport support(pair.gen.latents);
  const std::size_t n = support.size();
  const DenseArray xr = repeat_rows(as_row(x), n);
  const DenseArray cr = repeat_or_empty(c, n);
  const std::vector<double> post = normalized(log_joint_rows(pair.gen, xr, support.all(), cr));
  std::vector<double> g(pair.num_phi(), 0.0);
  accumulate_grad_log_q(pair.inf, support.all(), xr, cr, post, g);
  return g;
}

double fisher_identity_check(const GenerativeModel& gen, const DenseArray& x, const DenseArray& c,
                             double eps) {
  const std::vector<double> score = posterior_mean_grad_log_joint(gen, x, c);
  std::vector<double> theta(gen.num_params());
  gen.get_params(theta);
  GenerativeModel probe = gen;
  auto fn = [&](std::span<const double> p) {
    probe.set_params(p);
    return exact_log_likelihood(probe, x, c);
  };
  const DenseArray fd = finite_diff_grad(fn, DenseArray::vector(theta), eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) worst = std::max(worst, relative_error(score[i], fd[i]));
  return worst;
}

double estimate_nll(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                    std::size_t n_samples, std::mt19937_64& rng) {
  if (n_samples < 1) throw domain_error("estimate_nll needs at least one sample");
  const DenseArray xm = as_row(x);
  const DenseArray cm = as_row(c);
  const Proposals P = propose(pair.inf, xm, cm, n_samples, rng);
  std::vector<double> lw =
      log_joint_rows(pair.gen, repeat_rows(xm, n_samples), P.h, repeat_or_empty(cm, n_samples));
  for (std::size_t r = 0; r < lw.size(); ++r) lw[r] -= P.log_q[r];
  return -(log_sum_exp(lw) - std::log(static_cast<double>(n_samples)));
}

std::uint64_t derived_seed(std::uint64_t base, std::uint64_t i) {
  // splitmix64 finalizer over a combination of the two inputs
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (i + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> estimate_nll_rows(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                                      std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw domain_error("estimate_nll needs at least one sample");
  const auto n = static_cast<std::int64_t>(x.rows());
  std::vector<double> out(x.rows());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      std::mt19937_64 rng(derived_seed(seed, static_cast<std::uint64_t>(i)));
      out[i] = estimate_nll(pair, row_or_empty(x, i), row_or_empty(c, i), n_samples, rng);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double mean_estimated_nll(const ModelPair& pair, const DenseArray& x, const DenseArray& c,
                          std::size_t n_samples, std::uint64_t seed) {
  const auto v = estimate_nll_rows(pair, x, c, n_samples, seed);
  double s = 0.0;
  for (double d : v) s += d;
  return s / static_cast<double>(v.size());
}

double mean_exact_nll(const GenerativeModel& gen, const DenseArray& x, const DenseArray& c) {
  const EnumerableSupport support(gen.latents);
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    s -= log_sum_exp(log_joint_table(gen, support, row_or_empty(x, i), row_or_empty(c, i)));
  }
  return s / static_cast<double>(x.rows());
}

VarianceReport grad_variance(const std::function<GradEstimate(std::mt19937_64&)>& update,
                             std::size_t reps, std::mt19937_64& rng) {
  if (reps < 2) throw domain_error("grad_variance needs reps >= 2");
  std::vector<double> mean_t, m2_t, mean_p, m2_p;
  auto welford = [](const std::vector<double>& g, std::vector<double>& mean, std::vector<double>& m2,
                    std::size_t k) {
    if (mean.empty()) {
      mean.assign(g.size(), 0.0);
      m2.assign(g.size(), 0.0);
    }
    if (g.size() != mean.size()) throw shape_error("gradient length changed between repetitions");
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = g[i] - mean[i];
      mean[i] += d / static_cast<double>(k);
      m2[i] += d * (g[i] - mean[i]);
    }
  };
  for (std::size_t k = 1; k <= reps; ++k) {
    const GradEstimate g = update(rng);
    welford(g.g_theta, mean_t, m2_t, k);
    welford(g.g_phi, mean_p, m2_p, k);
  }
  auto log_sum = [&](const std::vector<double>& m2) {
    double s = 0.0;
    for (double v : m2) s += v / static_cast<double>(reps - 1);
    return s > 0.0 ? std::log(s) : -std::numeric_limits<double>::infinity();
  };
  return {log_sum(m2_t), log_sum(m2_p), reps};
}

}  // namespace jsa
