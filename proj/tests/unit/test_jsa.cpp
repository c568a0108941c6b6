#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "jsa/architecture.hpp"
#include "jsa/checkpoint.hpp"
#include "jsa/errors.hpp"
#include "jsa/eval.hpp"
#include "jsa/jsa.hpp"
#include "support/brute_force.hpp"
#include "support/tiny_models.hpp"

using namespace jsa;
using namespace jsa::testing;

namespace {

DenseArray random_rows(std::size_t n, std::size_t w, std::mt19937_64& rng) {
  DenseArray a = DenseArray::matrix(n, w);
  for (double& v : a.storage()) v = static_cast<double>(rng() % 2);
  return a;
}

// Draws a configuration index from a probability table.
std::size_t draw(const std::vector<double>& p, std::mt19937_64& rng) {
  return std::discrete_distribution<std::size_t>(p.begin(), p.end())(rng);
}

double total_variation(const std::vector<double>& counts, const std::vector<double>& p) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(counts[i] / n - p[i]);
  return 0.5 * tv;
}

JsaConfig tiny_config(std::size_t K, std::size_t m) {
  JsaConfig c;
  c.particle_number = K;
  c.minibatch_size = m;
  return c;
}

struct MeanSE {
  std::vector<double> s, s2;
  std::size_t n = 0;
  void add(const std::vector<double>& v) {
    if (s.empty()) s.assign(v.size(), 0.0), s2.assign(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) s[i] += v[i], s2[i] += v[i] * v[i];
    ++n;
  }
  double mean(std::size_t i) const { return s[i] / n; }
  double se(std::size_t i) const {
    const double m = mean(i);
    return std::sqrt(std::max(0.0, s2[i] / n - m * m) / (n - 1));
  }
};

}  // namespace

TEST_CASE("log importance weight examples") {
  ModelPair u = build_architecture("enc: 1-1s~B1; dec: B1-1s", 1);
  u.set_lambda(std::vector<double>(u.num_theta() + u.num_phi(), 0.0));
  const Latent h1{DenseArray::vector({1.0})};
  CHECK(log_importance_weight(u, DenseArray::vector({1.0}), h1) == doctest::Approx(-0.6931472).epsilon(1e-7));

  std::mt19937_64 rng(3);
  SUBCASE("constant in h when q is the exact posterior") {
    for (int trial = 0; trial < 5; ++trial) {
      const ModelPair p = posterior_matched_pair(4, rng);
      const DenseArray x = random_binary(4, rng);
      const double lw0 = log_importance_weight(p, x, Latent{DenseArray::vector({0.0})});
      const double lw1 = log_importance_weight(p, x, Latent{DenseArray::vector({1.0})});
      CHECK(std::abs(lw0 - lw1) < 1e-10);
      CHECK(std::abs(lw0 - exact_log_likelihood(p.gen, x)) < 1e-10);
    }
  }
  SUBCASE("weight differences ignore h-independent terms of the joint") {
    // Pixel 2 does not depend on h; shifting its bias shifts every log weight
    // by the same amount.
    ModelPair p = random_tiny_pair("enc: 3-2s~B2; dec: B2-3s", rng);
    auto lambda = p.get_lambda();
    // theta = [prior bias (2) | W (2 x 3) | b (3)]
    lambda[2 + 2] = lambda[2 + 5] = 0.0;
    p.set_lambda(lambda);
    ModelPair shifted = p;
    lambda[2 + 6 + 2] += 1.7;
    shifted.set_lambda(lambda);
    const DenseArray x = DenseArray::vector({1, 0, 1});
    const EnumerableSupport s(p.gen.latents);
    const double base = log_importance_weight(p, x, s.at(0));
    const double base_s = log_importance_weight(shifted, x, s.at(0));
    CHECK(std::abs(base - base_s) > 0.1);
    for (std::size_t r = 1; r < s.size(); ++r) {
      const double d = log_importance_weight(p, x, s.at(r)) - base;
      const double ds = log_importance_weight(shifted, x, s.at(r)) - base_s;
      CHECK(std::abs(d - ds) < 1e-12);
    }
  }
}

TEST_CASE("acceptance probability") {
  CHECK(mis_accept_probability(0.5) == 1.0);
  CHECK(mis_accept_probability(-1.0) == doctest::Approx(0.3678794).epsilon(1e-7));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int hits_pos = 0, hits_neg = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    hits_pos += standard_accept(0.5, u(rng));
    hits_neg += standard_accept(-1.0, u(rng));
  }
  CHECK(hits_pos == n);
  const double p = std::exp(-1.0);
  CHECK(std::abs(hits_neg / double(n) - p) < 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("MIS with a perfect proposal accepts everything") {
  std::mt19937_64 rng(5);
  const ModelPair p = posterior_matched_pair(5, rng);
  const DenseArray x = random_binary(5, rng);
  Latent h{DenseArray::vector({0.0})};
  int accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    const MisResult r = mis_step(p, x, h, {}, rng);
    CHECK(std::abs(r.delta) < 1e-10);
    accepted += r.accepted;
    h = r.h;
  }
  CHECK(accepted == 1000);
}

TEST_CASE("MIS chains target the exact posterior") {
  std::mt19937_64 rng(17);
  SUBCASE("mis_step, single steps") {
    const ModelPair p = random_tiny_pair(tiny_families()[0], rng, 1.5, 1.0);
    const DenseArray x = random_binary(6, rng);
    const EnumerableSupport s(p.gen.latents);
    const auto post = exact_posterior(p.gen, x);
    std::vector<double> counts(s.size(), 0.0);
    Latent h = sample_q(p.inf, x, {}, rng);
    for (int i = 0; i < 60000; ++i) {
      h = mis_step(p, x, h, {}, rng).h;
      if (i >= 500) counts[s.index_of(latent_row(Latent{h[0].rank() == 1 ? DenseArray({1, h[0].size()}, h[0].storage()) : h[0]}, 0))] += 1;
    }
    CHECK(total_variation(counts, post) < 0.03);
  }
  SUBCASE("blocked chains on several families") {
    for (std::size_t f : {0u, 2u, 3u, 4u}) {
      const ModelPair p = random_tiny_pair(tiny_families()[f], rng, 1.5, 1.0);
      const DenseArray x = random_binary(p.gen.obs_width, rng);
      const DenseArray c = context_for(p, rng);
      const EnumerableSupport s(p.gen.latents);
      const auto post = exact_posterior(p.gen, x, c);
      std::vector<double> counts(s.size(), 0.0);
      Latent h = latent_row(s.all(), 0);
      std::size_t step = 0;
      mis_chain(p, x, c, h, 300000, rng, [&](const Latent& states, std::size_t row) {
        if (step++ >= 1000) counts[s.index_of(states, row)] += 1;
      });
      CAPTURE(f);
      CHECK(total_variation(counts, post) < 0.02);
    }
  }
  SUBCASE("a corrupted acceptance rule is detected") {
    const ModelPair p = random_tiny_pair(tiny_families()[0], rng, 1.5, 1.0);
    const DenseArray x = random_binary(6, rng);
    const EnumerableSupport s(p.gen.latents);
    const auto post = exact_posterior(p.gen, x);
    std::vector<double> counts(s.size(), 0.0);
    Latent h = latent_row(s.all(), 0);
    // Uses exp(delta / 2) instead of exp(delta).
    const AcceptRule wrong = [](double delta, double u) { return std::log(u) < 0.5 * delta; };
    mis_chain(p, x, {}, h, 300000, rng, [&](const Latent& st, std::size_t row) { counts[s.index_of(st, row)] += 1; },
              wrong);
    CHECK(total_variation(counts, post) > 0.05);
  }
}

TEST_CASE("MIS kernel satisfies detailed balance exactly") {
  std::mt19937_64 rng(23);
  for (const auto& arch : tiny_families()) {
    const ModelPair p = random_tiny_pair(arch, rng, 1.5, 1.0);
    const DenseArray x = random_binary(p.gen.obs_width, rng);
    const DenseArray c = context_for(p, rng);
    const EnumerableSupport s(p.gen.latents);
    const auto post = exact_posterior(p.gen, x, c);
    const auto lq = log_q_table(p.inf, s, x, c);
    std::vector<double> lw(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) lw[i] = log_importance_weight(p, x, s.at(i), c);
    double worst = 0.0;
    for (std::size_t a = 0; a < s.size(); ++a) {
      for (std::size_t b = 0; b < s.size(); ++b) {
        if (a == b) continue;
        const double kab = std::exp(lq[b]) * mis_accept_probability(lw[b] - lw[a]);
        const double kba = std::exp(lq[a]) * mis_accept_probability(lw[a] - lw[b]);
        worst = std::max(worst, std::abs(post[a] * kab - post[b] * kba));
      }
    }
    CAPTURE(arch);
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("jsa_minibatch_update cache semantics") {
  std::mt19937_64 rng(31);
  const ModelPair p = random_tiny_pair("enc: 4-3s~B3; dec: B3-4s", rng);
  const std::size_t n = 8;
  const DenseArray X = random_rows(n, 4, rng);
  LatentCache cache(n, p.gen.latents);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  SUBCASE("stage II needs an entry for every batch index") {
    const std::vector<std::size_t> idx{2, 5};
    CHECK_THROWS_AS(jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(2, 2), Stage::Cache, rng),
                    state_error);
    CHECK(cache.filled() == 0);
  }
  SUBCASE("stage I fills exactly the visited entries") {
    const std::vector<std::size_t> idx{2, 5};
    const GradEstimate g = jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(3, 2), Stage::NoCache, rng);
    CHECK(cache.filled() == 2);
    CHECK(cache.has(2));
    CHECK(cache.has(5));
    CHECK(g.proposal_count == 6);
    CHECK(g.accept_count <= g.proposal_count);
    CHECK(g.g_theta.size() == p.num_theta());
    CHECK(g.g_phi.size() == p.num_phi());
  }

  initialize_cache(p, cache, X, {}, all, rng);
  REQUIRE(cache.filled() == n);
  const LatentCache before = cache;

  SUBCASE("forced rejection keeps the cache and scores the old states") {
    const std::vector<std::size_t> idx{1, 4};
    UpdateOptions opt;
    opt.accept = [](double, double) { return false; };
    const GradEstimate g = jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(1, 2), Stage::Cache, rng, opt);
    CHECK(cache == before);
    CHECK(g.accept_count == 0);
    CHECK(g.proposal_count == 2);
    std::vector<double> expect(p.num_theta(), 0.0), expect_phi(p.num_phi(), 0.0);
    for (std::size_t i : idx) {
      const std::size_t r[1] = {i};
      const DenseArray xi = gather_rows(X, r);
      const DenseArray gt = grad_log_joint(p.gen, xi, cache.get(i));
      const DenseArray gp = grad_log_q(p.inf, cache.get(i), xi);
      for (std::size_t k = 0; k < expect.size(); ++k) expect[k] += 0.5 * gt[k];
      for (std::size_t k = 0; k < expect_phi.size(); ++k) expect_phi[k] += 0.5 * gp[k];
    }
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(g.g_theta[k] == doctest::Approx(expect[k]).epsilon(1e-12));
    for (std::size_t k = 0; k < expect_phi.size(); ++k) CHECK(g.g_phi[k] == doctest::Approx(expect_phi[k]).epsilon(1e-12));
  }
  SUBCASE("only batch entries can change") {
    const std::vector<std::size_t> idx{0, 3, 6};
    for (int rep = 0; rep < 20; ++rep) {
      jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(4, 3), rep % 2 ? Stage::Cache : Stage::NoCache, rng);
      for (std::size_t i : {1, 2, 4, 5, 7}) CHECK(cache.raw(i) == before.raw(i));
    }
  }
  SUBCASE("probe mode writes nothing") {
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    for (int rep = 0; rep < 10; ++rep) {
      jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(3, 4), Stage::Cache, rng, {true, {}});
    }
    CHECK(cache == before);
  }
  SUBCASE("duplicate indices are rejected") {
    const std::vector<std::size_t> idx{3, 3};
    CHECK_THROWS_AS(jsa_minibatch_update(p, cache, make_batch(X, {}, idx), tiny_config(1, 2), Stage::Cache, rng),
                    domain_error);
  }
}

TEST_CASE("JSA gradients are unbiased at stationarity") {
  std::mt19937_64 rng(41);
  SUBCASE("theta block matches the posterior-averaged score") {
    const ModelPair p = random_tiny_pair("enc: 3-2s~B2; dec: B2-3s", rng, 1.5, 1.0);
    const DenseArray X = DenseArray({1, 3}, {1.0, 0.0, 1.0});
    const EnumerableSupport s(p.gen.latents);
    const auto post = exact_posterior(p.gen, X);
    const auto exact = posterior_mean_grad_log_joint(p.gen, X);
    LatentCache cache(1, p.gen.latents);
    const MiniBatch b = make_batch(X, {}, std::vector<std::size_t>{0});
    MeanSE acc;
    for (int rep = 0; rep < 10000; ++rep) {
      cache.put(0, s.all(), draw(post, rng));
      acc.add(jsa_minibatch_update(p, cache, b, tiny_config(2, 1), Stage::Cache, rng).g_theta);
    }
    for (std::size_t i = 0; i < exact.size(); ++i) {
      CAPTURE(i);
      CHECK(std::abs(acc.mean(i) - exact[i]) <= 3 * acc.se(i) + 1e-12);
    }
  }
  SUBCASE("phi block has mean zero when q is the posterior") {
    const ModelPair p = posterior_matched_pair(4, rng);
    const DenseArray X = DenseArray({1, 4}, {1.0, 1.0, 0.0, 1.0});
    const EnumerableSupport s(p.gen.latents);
    const auto post = exact_posterior(p.gen, X);
    LatentCache cache(1, p.gen.latents);
    const MiniBatch b = make_batch(X, {}, std::vector<std::size_t>{0});
    MeanSE acc;
    for (int rep = 0; rep < 10000; ++rep) {
      cache.put(0, s.all(), draw(post, rng));
      acc.add(jsa_minibatch_update(p, cache, b, tiny_config(2, 1), Stage::Cache, rng).g_phi);
    }
    for (std::size_t i = 0; i < p.num_phi(); ++i) CHECK(std::abs(acc.mean(i)) <= 3 * acc.se(i) + 1e-12);
  }
}

TEST_CASE("RWS estimator") {
  std::mt19937_64 rng(51);
  SUBCASE("needs two particles") {
    const ModelPair p = random_tiny_pair(tiny_families()[0], rng);
    const DenseArray X = random_rows(2, 6, rng);
    CHECK_THROWS_AS(rws_minibatch_update(p, make_batch(X, {}, std::vector<std::size_t>{0, 1}), 1, rng),
                    domain_error);
  }
  SUBCASE("uniform weights give the plain average") {
    const ModelPair p = posterior_matched_pair(5, rng);
    const DenseArray X = random_rows(3, 5, rng);
    const MiniBatch b = make_batch(X, {}, std::vector<std::size_t>{0, 1, 2});
    std::mt19937_64 replay = rng;
    const GradEstimate g = rws_minibatch_update(p, b, 6, rng);
    CHECK(g.accept_count == 18);
    CHECK(g.proposal_count == 18);
    const Proposals P = propose(p.inf, X, {}, 6, replay);
    std::vector<double> expect(p.num_theta(), 0.0);
    for (std::size_t r = 0; r < 18; ++r) {
      const std::size_t i[1] = {r / 6};
      const DenseArray gr = grad_log_joint(p.gen, gather_rows(X, i), latent_row(P.h, r));
      for (std::size_t k = 0; k < expect.size(); ++k) expect[k] += gr[k] / 18.0;
    }
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(g.g_theta[k] == doctest::Approx(expect[k]).epsilon(1e-9));
  }
  SUBCASE("many particles approach the exact expected gradient") {
    ModelPair p = random_tiny_pair(tiny_families()[2], rng);
    const DenseArray x = random_binary(6, rng);
    fit_q_to_posterior(p, x, {}, 200);
    const DenseArray X = DenseArray({1, 6}, x.storage());
    const GradEstimate g = rws_minibatch_update(p, make_batch(X, {}, std::vector<std::size_t>{0}), 40000, rng);
    const auto exact = posterior_mean_grad_log_joint(p.gen, x);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
      num += (g.g_theta[i] - exact[i]) * (g.g_theta[i] - exact[i]);
      den += exact[i] * exact[i];
    }
    CHECK(std::sqrt(num / den) < 1e-2);
  }
}

TEST_CASE("training recovers the maximum-likelihood prior") {
  // One latent bit and one pixel with a fixed decoder: P(x=1|h=1) = 0.8 and
  // P(x=1|h=0) = 0.2. Only the prior logit (and q) are trained.
  ModelPair p = build_architecture("enc: 1-1s~B1; dec: B1-1s", 7);
  std::vector<double> lambda{0.0, std::log(16.0), std::log(0.25), 0.0, 0.0};
  p.set_lambda(lambda);
  DenseArray X = DenseArray::matrix(10, 1);
  for (std::size_t i = 0; i < 7; ++i) X[i] = 1.0;

  // Oracle: grid search over the prior logit using brute-force marginals.
  double best_logit = 0.0, best_ll = -1e300;
  for (double a = -5.0; a <= 5.0; a += 1e-3) {
    ModelPair q = p;
    auto l = lambda;
    l[0] = a;
    q.set_lambda(l);
    double ll = 0.0;
    for (std::size_t i = 0; i < 10; ++i) ll += brute_log_marginal(q.gen, DenseArray::vector({X[i]}));
    if (ll > best_ll) best_ll = ll, best_logit = a;
  }
  CHECK(best_logit == doctest::Approx(std::log(5.0)).epsilon(1e-3));

  JsaConfig cfg = tiny_config(2, 10);
  cfg.total_epochs = 4000;
  cfg.lr = 0.02;
  cfg.schedule = Schedule::RobbinsMonro;
  cfg.rm_t0 = 200;
  cfg.rm_alpha = 1.0;
  cfg.seed = 3;
  TrainState st = make_train_state(p, 10, cfg);
  TrainOptions opt;
  opt.trainable = {1, 0, 0, 1, 1};
  const TrainResult res = train(st, X, {}, cfg, {}, opt);
  REQUIRE_FALSE(res.aborted);
  const double learned = st.pair.get_lambda()[0];
  MESSAGE("learned prior logit " << learned << ", grid-search ML " << best_logit);
  CHECK(std::abs(learned - best_logit) < 0.05);
  CHECK(st.pair.get_lambda()[1] == lambda[1]);
  CHECK(st.pair.get_lambda()[2] == lambda[2]);
}

TEST_CASE("training loop contracts") {
  std::mt19937_64 rng(61);
  const ModelPair p = random_tiny_pair(tiny_families()[0], rng, 1.0, 0.3);
  const DenseArray X = random_rows(40, 6, rng);
  JsaConfig cfg = tiny_config(2, 8);
  cfg.total_epochs = 6;
  cfg.stage1_epochs = 3;
  cfg.eval_every = 2;
  cfg.lr = 0.01;
  cfg.seed = 11;
  TrainHooks hooks;
  hooks.record_time = false;
  hooks.train_nll = [&](const ModelPair& m, std::size_t) { return mean_exact_nll(m.gen, X, {}); };
  hooks.valid_nll = hooks.train_nll;

  SUBCASE("stage-I-only run never needs the cache") {
    JsaConfig c1 = cfg;
    c1.stage1_epochs = c1.total_epochs;
    TrainState st = make_train_state(p, 40, c1);
    const TrainResult r = train(st, X, {}, c1, hooks);
    CHECK_FALSE(r.aborted);
    CHECK(st.stage == Stage::NoCache);
    CHECK(st.epoch == 6);
    CHECK(st.t == 6 * 5);
  }
  SUBCASE("same seed, same log") {
    TrainState a = make_train_state(p, 40, cfg), b = make_train_state(p, 40, cfg);
    const TrainResult ra = train(a, X, {}, cfg, hooks), rb = train(b, X, {}, cfg, hooks);
    REQUIRE(ra.records.size() == rb.records.size());
    for (std::size_t i = 0; i < ra.records.size(); ++i) {
      CHECK(ra.records[i].epoch == rb.records[i].epoch);
      CHECK(ra.records[i].split == rb.records[i].split);
      CHECK(ra.records[i].nll == rb.records[i].nll);
      CHECK((ra.records[i].accept_rate == rb.records[i].accept_rate ||
             (std::isnan(ra.records[i].accept_rate) && std::isnan(rb.records[i].accept_rate))));
    }
    CHECK(a.pair.get_lambda() == b.pair.get_lambda());
    // Validation at epochs 2, 4, 6 and train rows every epoch.
    CHECK(ra.records.size() == 9);
    CHECK(a.stage == Stage::Cache);
    CHECK(a.best_epoch > 0);
  }
  SUBCASE("best-validation parameters are retained") {
    TrainState st = make_train_state(p, 40, cfg);
    const TrainResult r = train(st, X, {}, cfg, hooks);
    double best = 1e300;
    std::size_t best_epoch = 0;
    for (const auto& rec : r.records) {
      if (rec.split == "valid" && rec.nll < best) best = rec.nll, best_epoch = rec.epoch;
    }
    CHECK(st.best_epoch == best_epoch);
    CHECK(st.best_valid == best);
    ModelPair at_best = st.pair;
    at_best.set_lambda(st.best_lambda);
    CHECK(mean_exact_nll(at_best.gen, X, {}) == doctest::Approx(best).epsilon(1e-12));
  }
  SUBCASE("divergence aborts and keeps the last good parameters") {
    JsaConfig c2 = cfg;
    c2.lr = 0.5;
    const auto l0 = p.get_lambda();
    double norm0 = 0;
    for (double v : l0) norm0 += v * v;
    c2.max_norm = std::sqrt(norm0) + 1.0;
    TrainState st = make_train_state(p, 40, c2);
    const TrainResult r = train(st, X, {}, c2, hooks);
    CHECK(r.aborted);
    CHECK(r.abort_reason.find("diverged") != std::string::npos);
    double norm = 0;
    for (double v : st.pair.get_lambda()) norm += v * v;
    CHECK(std::sqrt(norm) <= c2.max_norm);
  }
  SUBCASE("invalid configs are rejected") {
    JsaConfig bad = cfg;
    bad.stage1_epochs = 10;
    TrainState st = make_train_state(p, 40, cfg);
    CHECK_THROWS_AS(train(st, X, {}, bad), config_error);
    bad = cfg;
    bad.particle_number = 0;
    CHECK_THROWS_AS(train(st, X, {}, bad), config_error);
  }
  SUBCASE("RWS path trains") {
    TrainState st = make_train_state(p, 40, cfg);
    TrainOptions opt;
    opt.algorithm = Algorithm::Rws;
    const double before = mean_exact_nll(st.pair.gen, X, {});
    const TrainResult r = train(st, X, {}, cfg, hooks, opt);
    CHECK_FALSE(r.aborted);
    CHECK(mean_exact_nll(st.pair.gen, X, {}) < before);
  }
}

TEST_CASE("checkpoints round-trip and resume exactly") {
  std::mt19937_64 rng(71);
  const ModelPair p = random_tiny_pair(tiny_families()[2], rng, 1.0, 0.3);
  const DenseArray X = random_rows(30, 6, rng);
  JsaConfig cfg = tiny_config(2, 7);
  cfg.total_epochs = 6;
  cfg.stage1_epochs = 2;
  cfg.lr = 0.01;
  const auto dir = std::filesystem::temp_directory_path() / "jsa_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "a.ckpt").string();

  TrainState straight = make_train_state(p, 30, cfg);
  train(straight, X, {}, cfg);

  JsaConfig first = cfg;
  first.total_epochs = 3;
  TrainState part = make_train_state(p, 30, cfg);
  train(part, X, {}, first);
  save_checkpoint(path, part, "{\"note\": 1}");
  std::string meta;
  TrainState loaded = load_checkpoint(path, &meta);
  CHECK(meta == "{\"note\": 1}");
  CHECK(loaded.pair.get_lambda() == part.pair.get_lambda());
  CHECK(loaded.cache == part.cache);
  CHECK(loaded.epoch == 3);
  CHECK(loaded.t == part.t);
  CHECK(loaded.stage == Stage::Cache);
  CHECK(loaded.adam->m == part.adam->m);
  CHECK(loaded.adam->v == part.adam->v);
  CHECK(loaded.adam->step == part.adam->step);
  CHECK(loaded.rng == part.rng);
  CHECK(loaded.pair.architecture == p.architecture);

  train(loaded, X, {}, cfg);
  CHECK(loaded.pair.get_lambda() == straight.pair.get_lambda());
  CHECK(loaded.cache == straight.cache);

  SUBCASE("malformed files") {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const std::string cut = (dir / "cut.ckpt").string();
    {
      std::ofstream out(cut, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(cut), format_error);
    {
      std::ofstream out(cut, std::ios::binary);
      out << "NOTACKPT" << bytes.substr(8);
    }
    CHECK_THROWS_AS(load_checkpoint(cut), format_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), config_error);
  }
  std::filesystem::remove_all(dir);
}
