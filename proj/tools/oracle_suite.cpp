#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "commands.hpp"
#include "jsa/architecture.hpp"
#include "jsa/eval.hpp"
#include "jsa/jsa.hpp"
#include "jsa/net.hpp"

namespace jsa::cli {

namespace {

const std::vector<std::string> kFamilies = {
    "enc: 6-3s~B3; dec: B3-6s",
    "enc: 6-5r-4r-3s~B3; dec: B3-4r-5r-6s",
    "enc: 6-3s~B3-2s~B2; dec: B2-3s~B3-6s",
    "enc: 6-5r-6m~C2x3; dec: C2x3-5r-6s",
    "ctx: 3; prior: 3-4t-3s~B3; enc: 7-4t-4t-3s~B3; dec: B3-4t-4t-4s",
};

struct Instance {
  ModelPair pair;
  DenseArray x, c;
};

Instance random_instance(const std::string& arch, std::mt19937_64& rng) {
  Instance in{build_architecture(arch, rng()), {}, {}};
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> lambda = in.pair.get_lambda();
  for (std::size_t i = 0; i < lambda.size(); ++i) lambda[i] = nd(rng) * (i < in.pair.num_theta() ? 1.5 : 0.5);
  in.pair.set_lambda(lambda);
  auto bits = [&](std::size_t w) {
    DenseArray a = DenseArray::vector(std::vector<double>(w));
    for (double& v : a.storage()) v = static_cast<double>(rng() & 1u);
    return a;
  };
  in.x = bits(in.pair.gen.obs_width);
  if (in.pair.gen.context_width) in.c = bits(in.pair.gen.context_width);
  return in;
}

struct Report {
  int failures = 0;
  void line(bool ok, const std::string& name, double value, double bound, const std::string& note = "") {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s  %-44s worst %.3g (bound %.3g)", ok ? "PASS" : "FAIL", name.c_str(), value,
                  bound);
    std::cout << buf << (note.empty() ? "" : "  " + note) << std::endl;
    if (!ok) ++failures;
  }
};

struct GradCheck {
  double worst = 0.0;
  std::size_t kinks = 0;
  std::string where;
};

// Coordinates whose central differences disagree between two step sizes sit
// on a leaky-ReLU kink; they are counted, not compared.
void grad_check(GradCheck& gc, const std::string& where, const std::function<double(std::span<const double>)>& fn,
                std::span<const double> p, const std::vector<double>& analytic) {
  const DenseArray at = DenseArray::vector(std::vector<double>(p.begin(), p.end()));
  const DenseArray fd = finite_diff_grad(fn, at, 1e-5);
  const DenseArray fd_fine = finite_diff_grad(fn, at, 2.5e-6);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (relative_error(fd[i], fd_fine[i]) > 1e-4) {
      ++gc.kinks;
      continue;
    }
    const double e = relative_error(analytic[i], fd[i]);
    if (e > gc.worst) gc.worst = e, gc.where = where;
  }
}

std::string kink_note(const GradCheck& gc) {
  std::string s = gc.kinks ? std::to_string(gc.kinks) + " kink coordinate(s) skipped" : "";
  if (!gc.where.empty()) s += (s.empty() ? "" : "; ") + std::string("worst in ") + gc.where;
  return s;
}

}  // namespace

int cmd_oracle_suite(const OracleArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  Report rep;
  std::mt19937_64 rng(args.seed);
  const int per_family = 4;

  {
    double worst = 0.0;
    for (const auto& arch : kFamilies) {
      const Instance in = random_instance(arch, rng);
      const std::size_t w = in.pair.gen.obs_width;
      std::vector<double> ll;
      for (std::size_t code = 0; code < (std::size_t{1} << w); ++code) {
        DenseArray x = DenseArray::vector(std::vector<double>(w));
        for (std::size_t j = 0; j < w; ++j) x[j] = static_cast<double>((code >> j) & 1u);
        ll.push_back(exact_log_likelihood(in.pair.gen, x, in.c));
      }
      worst = std::max(worst, std::abs(log_sum_exp(ll)));
    }
    rep.line(worst <= 1e-10, "marginal likelihood sums to one", worst, 1e-10);
  }

  {
    GradCheck gj, gq;
    for (const auto& arch : kFamilies) {
      for (int k = 0; k < per_family; ++k) {
        Instance in = random_instance(arch, rng);
        const Latent h = sample_q(in.pair.inf, in.x, in.c, rng);
        std::vector<double> theta(in.pair.num_theta()), phi(in.pair.num_phi());
        in.pair.gen.get_params(theta);
        in.pair.inf.get_params(phi);
        const DenseArray dj = grad_log_joint(in.pair.gen, in.x, h, in.c);
        const DenseArray dq = grad_log_q(in.pair.inf, h, in.x, in.c);
        GenerativeModel g = in.pair.gen;
        InferenceModel q = in.pair.inf;
        grad_check(
            gj, arch,
            [&](std::span<const double> p) {
              g.set_params(p);
              return log_joint(g, in.x, h, in.c);
            },
            theta, dj.storage());
        grad_check(
            gq, arch,
            [&](std::span<const double> p) {
              q.set_params(p);
              return log_q(q, h, in.x, in.c);
            },
            phi, dq.storage());
      }
    }
    rep.line(gj.worst <= 1e-4, "log_joint gradient vs finite differences", gj.worst, 1e-4, kink_note(gj));
    rep.line(gq.worst <= 1e-4, "log_q gradient vs finite differences", gq.worst, 1e-4, kink_note(gq));
  }

  {
    double worst = 0.0;
    for (const auto& arch : kFamilies) {
      for (int k = 0; k < per_family; ++k) {
        const Instance in = random_instance(arch, rng);
        worst = std::max(worst, fisher_identity_check(in.pair.gen, in.x, in.c));
      }
    }
    rep.line(worst <= 1e-4, "Fisher identity", worst, 1e-4);
  }

  {
    GradCheck kl_grad;
    double min_kl = 0.0;
    for (const auto& arch : kFamilies) {
      Instance in = random_instance(arch, rng);
      min_kl = std::min(min_kl, inclusive_kl_exact(in.pair, in.x, in.c));
      std::vector<double> phi(in.pair.num_phi());
      in.pair.inf.get_params(phi);
      std::vector<double> neg = posterior_mean_grad_log_q(in.pair, in.x, in.c);
      for (double& v : neg) v = -v;
      ModelPair probe = in.pair;
      grad_check(
          kl_grad, arch,
          [&](std::span<const double> p) {
            probe.inf.set_params(p);
            return inclusive_kl_exact(probe, in.x, in.c);
          },
          phi, neg);
    }
    rep.line(min_kl >= 0.0, "inclusive KL is nonnegative", -min_kl, 0.0);
    rep.line(kl_grad.worst <= 1e-4, "inclusive KL gradient is -E_p[score of q]", kl_grad.worst, 1e-4,
             kink_note(kl_grad));
  }

  {
    double worst = 0.0;
    for (const auto& arch : kFamilies) {
      const Instance in = random_instance(arch, rng);
      const EnumerableSupport s(in.pair.gen.latents);
      const auto post = exact_posterior(in.pair.gen, in.x, in.c);
      const auto lq = log_q_table(in.pair.inf, s, in.x, in.c);
      std::vector<double> lw(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) lw[i] = log_importance_weight(in.pair, in.x, s.at(i), in.c);
      for (std::size_t a = 0; a < s.size(); ++a) {
        for (std::size_t b = 0; b < s.size(); ++b) {
          const double fwd = post[a] * std::exp(lq[b]) * mis_accept_probability(lw[b] - lw[a]);
          const double bwd = post[b] * std::exp(lq[a]) * mis_accept_probability(lw[a] - lw[b]);
          worst = std::max(worst, std::abs(fwd - bwd));
        }
      }
    }
    rep.line(worst <= 1e-10, "MIS detailed balance", worst, 1e-10);
  }

  {
    AcceptRule rule;
    if (args.corrupt_accept) rule = [](double delta, double u) { return std::log(u) < 0.5 * delta; };
    double worst = 0.0;
    std::string where;
    for (const auto& arch : kFamilies) {
      const Instance in = random_instance(arch, rng);
      const EnumerableSupport s(in.pair.gen.latents);
      const auto post = exact_posterior(in.pair.gen, in.x, in.c);
      std::vector<double> counts(s.size(), 0.0);
      Latent h = s.at(0);
      std::size_t step = 0;
      mis_chain(
          in.pair, in.x, in.c, h, 1000000, rng,
          [&](const Latent& st, std::size_t row) {
            if (step++ >= 1000) counts[s.index_of(st, row)] += 1;
          },
          rule);
      const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
      double tv = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) tv += std::abs(counts[i] / n - post[i]);
      if (0.5 * tv > worst) worst = 0.5 * tv, where = arch;
    }
    rep.line(worst <= 0.02, "MIS chain leaves the posterior invariant", worst, 0.02, "worst in " + where);
  }

  {
    // Jensen: the IS estimate overstates the NLL on average.
    double worst = 0.0;
    for (const auto& arch : kFamilies) {
      const Instance in = random_instance(arch, rng);
      const double exact = -exact_log_likelihood(in.pair.gen, in.x, in.c);
      double s = 0.0, s2 = 0.0;
      const int reps = 400;
      for (int r = 0; r < reps; ++r) {
        const double v = estimate_nll(in.pair, in.x, in.c, 4, rng);
        s += v;
        s2 += v * v;
      }
      const double mean = s / reps, se = std::sqrt(std::max(0.0, s2 / reps - mean * mean) / (reps - 1));
      worst = std::max(worst, (exact - mean) / std::max(se, 1e-12));
    }
    rep.line(worst <= 3.0, "IS-NLL is biased upward (z-score)", worst, 3.0);
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (rep.failures ? "oracle suite FAILED: " : "oracle suite passed: ") << rep.failures
            << " failing check(s), " << secs << " s" << std::endl;
  return rep.failures ? kExitFailure : kExitOk;
}

}  // namespace jsa::cli
