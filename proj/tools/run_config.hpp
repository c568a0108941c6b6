#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "jsa/data.hpp"
#include "jsa/jsa.hpp"
#include "json.hpp"

namespace jsa::cli {

// Everything a run needs; written next to the outputs as config.json and
// accepted back through --config.
struct RunConfig {
  std::string task = "generative-bernoulli";
  std::string arch;  // preset name or spec string; empty = task default
  std::string algo = "jsa";
  std::size_t particles = 2;
  std::size_t batch = 50;
  double lr = 3e-4;
  std::size_t total_epochs = 1000;
  std::size_t stage1_epochs = 600;
  std::size_t eval_every = 5;
  std::uint64_t seed = 1;
  std::string schedule = "constant";
  double rm_t0 = 1000.0;
  double rm_alpha = 1.0;
  double max_norm = 1e6;

  std::string data_root;
  std::string binarize = "threshold";
  std::size_t n_train = 0;  // 0: split default
  std::size_t n_valid = 0;
  std::string synthetic_arch = "enc: 4-4s~B4; dec: B4-4s";
  std::size_t synthetic_n = 500;
  std::uint64_t synthetic_seed = 1;

  std::size_t valid_samples = 100;
  std::size_t test_samples = 1000;
  std::size_t train_eval_size = 500;  // 0 disables the train NLL column
  bool record_time = true;
  std::string out;
};

/// Paper-style defaults for a task: architecture, batch, particles, epochs.
void apply_task_defaults(RunConfig& cfg);

/// Throws config_error on bad values or a task/architecture mismatch.
void validate(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j);

JsaConfig jsa_config(const RunConfig& cfg);
Algorithm algorithm(const RunConfig& cfg);

struct TaskData {
  Dataset train, valid, test;
  bool test_is_valid = false;
};

/// Loads and binarizes the data for cfg.task (splitting halves for the
/// structured task, sampling for the synthetic one).
TaskData load_task_data(const RunConfig& cfg);

/// Checks the architecture against the task's data widths.
void check_compatible(const RunConfig& cfg, const ModelPair& pair);

}  // namespace jsa::cli
