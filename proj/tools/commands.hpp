#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "run_config.hpp"

namespace jsa::cli {

// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // an oracle check failed
inline constexpr int kExitUsage = 2;    // bad configuration or unreadable input
inline constexpr int kExitAbort = 3;    // training diverged

int cmd_train(const RunConfig& cfg, const std::string& resume);

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
  std::string data_root;  // overrides the root stored in the checkpoint
};
int cmd_eval(const EvalArgs& args);

struct VarianceArgs {
  std::string checkpoint;
  std::size_t reps = 100;
  std::uint64_t seed = 1;
  std::size_t particles = 0;  // 0: value stored in the checkpoint config
  std::size_t batch = 0;
  std::string data_root;
  std::string out;  // JSON lines file to append to; empty: stdout only
};
int cmd_variance(const VarianceArgs& args);

struct OracleArgs {
  std::uint64_t seed = 20200701;
  bool corrupt_accept = false;  // test fixture: MIS uses a wrong acceptance rule
};
int cmd_oracle_suite(const OracleArgs& args);

}  // namespace jsa::cli
