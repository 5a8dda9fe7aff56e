#pragma once

// The `piaa` command line. Kept as a library so tests can drive it in-process.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "piaa/eval.hpp"

namespace piaa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitUndefinedAp = 3;

// Effective run settings. Precedence: command-line flags > config file > these defaults.
struct RunConfig {
  std::size_t bank_capacity = kDefaultBankCapacity;
  double alpha = kDefaultAlpha;
  double logit_scale = kDefaultLogitScale;
  double temperature = kDefaultAggregationTemperature;
  InferMode mode = InferMode::full;
  bool transductive = false;
  bool secondary_softmax = true;
  bool stage1_shrinkage = true;
  bool self_consistent_covariance = false;
  bool allow_empty_classes = false;
  bool normalize = true;
  bool cls_through_gda = false;
  int threads = 0;  // 0: PIAA_THREADS, else hardware concurrency
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const RunConfig& config);
// Applies the keys present in `j` on top of `base`; unknown keys throw.
RunConfig apply_json(const nlohmann::json& j, RunConfig base);
PipelineConfig pipeline_config(const RunConfig& config);

InferMode parse_mode(const std::string& name);
std::string mode_name(InferMode mode);

int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace piaa::cli
