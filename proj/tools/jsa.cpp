#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "commands.hpp"
#include "jsa/errors.hpp"

using namespace jsa;
using namespace jsa::cli;

namespace {

using Setter = std::function<void(RunConfig&)>;

// Registers a flag whose value is copied into the config only when given, so
// command-line values override both task defaults and --config files.
template <class T>
CLI::Option* bind_flag(CLI::App* app, std::vector<Setter>& setters, const std::string& name, T RunConfig::*member,
                  const std::string& help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(name, *value, help);
  setters.push_back([opt, value, member](RunConfig& c) {
    if (opt->count()) c.*member = *value;
  });
  return opt;
}

RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config file " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint stochastic approximation for discrete latent variable models"};
  app.require_subcommand(1);

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write metrics.csv and checkpoints");
  std::vector<Setter> setters;
  std::string config_path, resume;
  bool no_record_time = false;
  train_cmd->add_option("--config", config_path, "reload a config.json snapshot (flags still override)");
  train_cmd->add_option("--resume", resume, "continue from a checkpoint");
  auto* task_opt = bind_flag(train_cmd, setters, "--task", &RunConfig::task,
                        "generative-bernoulli | generative-categorical | structured | synthetic");
  auto* arch_opt = bind_flag(train_cmd, setters, "--arch", &RunConfig::arch, "architecture preset or spec string");
  bind_flag(train_cmd, setters, "--algo", &RunConfig::algo, "jsa | rws");
  bind_flag(train_cmd, setters, "--particles", &RunConfig::particles, "particle number K");
  bind_flag(train_cmd, setters, "--batch", &RunConfig::batch, "minibatch size");
  bind_flag(train_cmd, setters, "--lr", &RunConfig::lr, "Adam learning rate");
  bind_flag(train_cmd, setters, "--total-epochs", &RunConfig::total_epochs, "training epochs");
  bind_flag(train_cmd, setters, "--stage1-epochs", &RunConfig::stage1_epochs, "epochs before the cache is used");
  bind_flag(train_cmd, setters, "--eval-every", &RunConfig::eval_every, "validation cadence in epochs");
  bind_flag(train_cmd, setters, "--seed", &RunConfig::seed, "random seed");
  bind_flag(train_cmd, setters, "--schedule", &RunConfig::schedule, "constant | rm");
  bind_flag(train_cmd, setters, "--rm-t0", &RunConfig::rm_t0, "decay offset for --schedule rm");
  bind_flag(train_cmd, setters, "--rm-alpha", &RunConfig::rm_alpha, "decay exponent for --schedule rm");
  bind_flag(train_cmd, setters, "--max-norm", &RunConfig::max_norm, "abort when |lambda| exceeds this");
  bind_flag(train_cmd, setters, "--data-root", &RunConfig::data_root, "MNIST directory (default $JSA_DATA_ROOT)");
  bind_flag(train_cmd, setters, "--binarize", &RunConfig::binarize, "threshold | standard");
  bind_flag(train_cmd, setters, "--n-train", &RunConfig::n_train, "training images (small files only)");
  bind_flag(train_cmd, setters, "--n-valid", &RunConfig::n_valid, "held-out validation images (small files only)");
  auto* syn_arch_opt =
      bind_flag(train_cmd, setters, "--synthetic-arch", &RunConfig::synthetic_arch, "generator for --task synthetic");
  bind_flag(train_cmd, setters, "--synthetic-n", &RunConfig::synthetic_n, "training points for --task synthetic");
  bind_flag(train_cmd, setters, "--synthetic-seed", &RunConfig::synthetic_seed, "data seed for --task synthetic");
  bind_flag(train_cmd, setters, "--valid-samples", &RunConfig::valid_samples, "IS samples per validation point");
  bind_flag(train_cmd, setters, "--test-samples", &RunConfig::test_samples, "IS samples per test point");
  bind_flag(train_cmd, setters, "--train-eval-size", &RunConfig::train_eval_size,
       "training points in the train NLL column (0 disables)");
  bind_flag(train_cmd, setters, "--out", &RunConfig::out, "output directory");
  train_cmd->add_flag("--no-record-time", no_record_time, "write 0 in the seconds column");

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "importance-sampling NLL of a checkpoint");
  EvalArgs eval_args;
  eval_cmd->add_option("checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_args.split, "train | valid | test");
  eval_cmd->add_option("--samples", eval_args.samples, "proposal samples per point");
  eval_cmd->add_option("--seed", eval_args.seed, "sampling seed");
  eval_cmd->add_option("--data-root", eval_args.data_root, "override the stored data root");

  // variance
  CLI::App* var_cmd = app.add_subcommand("variance", "gradient variance of JSA and RWS at a checkpoint");
  VarianceArgs var_args;
  var_cmd->add_option("checkpoint", var_args.checkpoint, "checkpoint file")->required();
  var_cmd->add_option("--reps", var_args.reps, "repetitions");
  var_cmd->add_option("--seed", var_args.seed, "sampling seed");
  var_cmd->add_option("--particles", var_args.particles, "particle number (default: from the checkpoint)");
  var_cmd->add_option("--batch", var_args.batch, "minibatch size (default: from the checkpoint)");
  var_cmd->add_option("--data-root", var_args.data_root, "override the stored data root");
  var_cmd->add_option("--out", var_args.out, "append the JSON report to this file");

  // oracle-suite
  CLI::App* oracle_cmd = app.add_subcommand("oracle-suite", "enumeration, gradient and MIS checks on tiny models");
  OracleArgs oracle_args;
  oracle_cmd->add_option("--seed", oracle_args.seed, "fixture seed");
  oracle_cmd->add_flag("--corrupt-accept", oracle_args.corrupt_accept,
                       "test fixture: use a wrong MIS acceptance rule (the suite must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      RunConfig cfg;
      if (!config_path.empty()) {
        cfg = read_config_file(config_path);
      } else {
        if (task_opt->count()) cfg.task = task_opt->as<std::string>();
        if (syn_arch_opt->count()) cfg.synthetic_arch = syn_arch_opt->as<std::string>();
        apply_task_defaults(cfg);
      }
      for (const auto& s : setters) s(cfg);
      if (config_path.empty() && cfg.task == "synthetic" && !arch_opt->count()) cfg.arch = cfg.synthetic_arch;
      if (no_record_time) cfg.record_time = false;
      return cmd_train(cfg, resume);
    }
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*var_cmd) return cmd_variance(var_args);
    if (*oracle_cmd) return cmd_oracle_suite(oracle_args);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
