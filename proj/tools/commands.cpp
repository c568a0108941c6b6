#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "jsa/architecture.hpp"
#include "jsa/checkpoint.hpp"
#include "jsa/errors.hpp"
#include "jsa/eval.hpp"

namespace jsa::cli {

namespace fs = std::filesystem;

namespace {

// Stream tags for evaluation seeds, so each split uses a fixed sample stream.
constexpr std::uint64_t kValidStream = 1, kTrainStream = 2, kTestStream = 3;

std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string csv_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + fmt("%.6f", r.nll) + "," + fmt("%.6f", r.accept_rate) +
         "," + fmt("%.3f", r.seconds) + "\n";
}

DenseArray head_rows(const DenseArray& a, std::size_t n) {
  if (a.empty() || n >= a.rows()) return a;
  DenseArray out = DenseArray::matrix(n, a.cols());
  std::copy(a.storage().begin(), a.storage().begin() + static_cast<std::ptrdiff_t>(n * a.cols()),
            out.storage().begin());
  return out;
}

const Dataset& pick_split(const TaskData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "valid") return d.valid;
  if (split == "test") return d.test;
  throw config_error("unknown split '" + split + "' (train, valid or test)");
}

RunConfig config_from_checkpoint(const std::string& meta, const std::string& data_root) {
  RunConfig cfg;
  try {
    cfg = from_json(nlohmann::json::parse(meta));
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("checkpoint carries no readable run config: ") + e.what());
  }
  if (!data_root.empty()) cfg.data_root = data_root;
  return cfg;
}

}  // namespace

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  validate(cfg);
  if (cfg.out.empty()) throw config_error("--out is required");
  ModelPair pair = build_architecture(cfg.arch, cfg.seed);
  check_compatible(cfg, pair);
  const TaskData data = load_task_data(cfg);
  const JsaConfig jc = jsa_config(cfg);

  fs::create_directories(cfg.out);
  const fs::path out(cfg.out);
  const std::string meta = to_json(cfg).dump();
  {
    std::ofstream f(out / "config.json");
    f << to_json(cfg).dump(2) << "\n";
  }

  TrainState state;
  if (resume.empty()) {
    state = make_train_state(std::move(pair), data.train.size(), jc);
  } else {
    state = load_checkpoint(resume);
    if (state.pair.architecture != pair.architecture) {
      throw config_error("checkpoint architecture '" + state.pair.architecture + "' differs from the config");
    }
    if (state.cache.size() != data.train.size()) throw config_error("checkpoint was trained on a different dataset");
  }

  if (cfg.total_epochs == 0) {
    save_checkpoint((out / "last.ckpt").string(), state, meta);
    std::cout << "total epochs 0: wrote initial checkpoint " << (out / "last.ckpt").string() << "\n";
    return kExitOk;
  }
  if (data.test_is_valid) std::cerr << "note: no test file found; test NLL is reported on the validation split\n";

  std::ofstream metrics(out / "metrics.csv", resume.empty() ? std::ios::trunc : std::ios::app);
  if (resume.empty()) metrics << "epoch,split,nll,accept_rate,seconds\n";

  const DenseArray train_x = head_rows(data.train.items, cfg.train_eval_size);
  const DenseArray train_c = head_rows(data.train.contexts, cfg.train_eval_size);
  TrainHooks hooks;
  hooks.record_time = cfg.record_time;
  if (cfg.train_eval_size > 0) {
    hooks.train_nll = [&](const ModelPair& m, std::size_t) {
      return mean_estimated_nll(m, train_x, train_c, cfg.valid_samples, derived_seed(cfg.seed, kTrainStream));
    };
  }
  hooks.valid_nll = [&](const ModelPair& m, std::size_t) {
    return mean_estimated_nll(m, data.valid.items, data.valid.contexts, cfg.valid_samples,
                              derived_seed(cfg.seed, kValidStream));
  };
  hooks.on_record = [&](const EpochRecord& r) {
    metrics << csv_row(r);
    metrics.flush();
    std::cout << "epoch " << r.epoch << " " << r.split << " nll " << fmt("%.4f", r.nll);
    if (!std::isnan(r.accept_rate)) std::cout << " accept " << fmt("%.4f", r.accept_rate);
    std::cout << std::endl;
  };
  hooks.after_epoch = [&](const TrainState& s) {
    save_checkpoint((out / "last.ckpt").string(), s, meta);
    if (s.best_epoch == s.epoch) save_checkpoint((out / "best.ckpt").string(), s, meta);
  };

  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions opts;
  opts.algorithm = algorithm(cfg);
  const TrainResult result = train(state, data.train.items, data.train.contexts, jc, hooks, opts);
  if (result.aborted) {
    // Parameters are those of the last successful update.
    save_checkpoint((out / "last.ckpt").string(), state, meta);
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    return kExitAbort;
  }

  ModelPair best = state.pair;
  if (!state.best_lambda.empty()) best.set_lambda(state.best_lambda);
  const double test_nll = mean_estimated_nll(best, data.test.items, data.test.contexts, cfg.test_samples,
                                             derived_seed(cfg.seed, kTestStream));
  const double seconds =
      cfg.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
  metrics << csv_row({state.best_epoch, "test", test_nll, std::numeric_limits<double>::quiet_NaN(), seconds});
  std::cout << "test NLL at best validation epoch " << state.best_epoch << ": " << fmt("%.4f", test_nll) << " ("
            << cfg.test_samples << " samples per point)\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& args) {
  std::string meta;
  const TrainState state = load_checkpoint(args.checkpoint, &meta);
  const RunConfig cfg = config_from_checkpoint(meta, args.data_root);
  if (args.samples < 1) throw config_error("--samples must be at least 1");
  const TaskData data = load_task_data(cfg);
  const Dataset& d = pick_split(data, args.split);
  const double nll = mean_estimated_nll(state.pair, d.items, d.contexts, args.samples, args.seed);
  std::cout << args.split << " NLL " << fmt("%.6f", nll) << " (" << d.size() << " points, " << args.samples
            << " samples each)\n";
  return kExitOk;
}

int cmd_variance(const VarianceArgs& args) {
  std::string meta;
  TrainState state = load_checkpoint(args.checkpoint, &meta);
  RunConfig cfg = config_from_checkpoint(meta, args.data_root);
  if (args.particles) cfg.particles = args.particles;
  if (args.batch) cfg.batch = args.batch;
  if (args.reps < 2) throw config_error("--reps must be at least 2");
  if (cfg.particles < 2) throw config_error("the RWS estimator needs --particles >= 2");
  const TaskData data = load_task_data(cfg);
  const std::size_t m = std::min(cfg.batch, data.train.size());

  // The first minibatch of the training set, as in the reference experiment.
  std::vector<std::size_t> index(m);
  for (std::size_t i = 0; i < m; ++i) index[i] = i;
  const MiniBatch batch = make_batch(data.train.items, data.train.contexts, index);
  std::mt19937_64 rng(args.seed);
  LatentCache cache = state.cache;
  if (cache.filled() < cache.size()) {
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < cache.size(); ++i) {
      if (!cache.has(i)) missing.push_back(i);
    }
    initialize_cache(state.pair, cache, data.train.items, data.train.contexts, missing, rng);
  }
  JsaConfig jc = jsa_config(cfg);
  const VarianceReport jsa = grad_variance(
      [&](std::mt19937_64& r) {
        return jsa_minibatch_update(state.pair, cache, batch, jc, Stage::Cache, r, {true, {}});
      },
      args.reps, rng);
  const VarianceReport rws = grad_variance(
      [&](std::mt19937_64& r) { return rws_minibatch_update(state.pair, batch, cfg.particles, r); }, args.reps, rng);

  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  const nlohmann::json report = {
      {"checkpoint", args.checkpoint},
      {"epoch", state.epoch},
      {"reps", args.reps},
      {"particles", cfg.particles},
      {"batch", m},
      {"jsa", {{"log_var_theta", num(jsa.log_sum_var_theta)}, {"log_var_phi", num(jsa.log_sum_var_phi)}}},
      {"rws", {{"log_var_theta", num(rws.log_sum_var_theta)}, {"log_var_phi", num(rws.log_sum_var_phi)}}}};
  std::cout << report.dump() << "\n";
  if (!args.out.empty()) {
    std::ofstream f(args.out, std::ios::app);
    if (!f) throw config_error("cannot write " + args.out);
    f << report.dump() << "\n";
  }
  return kExitOk;
}

}  // namespace jsa::cli
