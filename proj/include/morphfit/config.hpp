#ifndef MORPHFIT_CONFIG_HPP_
#define MORPHFIT_CONFIG_HPP_

#include <string>

#include "morphfit/data.hpp"
#include "morphfit/eval.hpp"
#include "morphfit/model.hpp"
#include "morphfit/train.hpp"

namespace morphfit {

/// Everything a command needs, populated with defaults and overridable from a
/// JSON file. Validation is strict: unknown keys and out-of-range values are
/// rejected with the offending field path.
struct ProjectConfig {
  std::uint64_t seed = 42;
  ModelGenConfig model;
  DataGenConfig data;
  TrainingConfig training;  // carries the network shape and the weight mask
  EvalOptions eval;
  std::vector<std::uint64_t> ablation_seeds = {101, 202, 303, 404, 505};
  std::vector<double> wild_volumes = {0.25, 0.5, 0.75, 1.0};

  /// Re-derives the per-module seeds from the top-level seed.
  void apply_seed(std::uint64_t new_seed);
};

ProjectConfig default_config();

/// Parses and validates a config JSON document (a partial document is fine;
/// missing fields keep their defaults).
ProjectConfig parse_config(const std::string& json_text);
ProjectConfig load_config_file(const std::string& path);

/// The full default configuration as pretty-printed JSON (--explain-config).
std::string config_to_json(const ProjectConfig& config);

}  // namespace morphfit

#endif  // MORPHFIT_CONFIG_HPP_
