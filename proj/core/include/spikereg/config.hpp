#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spikereg/dropout.hpp"
#include "spikereg/model.hpp"
#include "spikereg/similarity.hpp"

namespace spikereg {

struct OptimConfig {
  std::string kind = "adam";
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 200;  // linear warmup, 0 disables
};

struct SeedConfig {
  std::uint64_t init = 1;
  std::uint64_t dropout_branch1 = 2;
  std::uint64_t dropout_branch2 = 3;
  std::uint64_t data_order = 4;
};

// Complete declarative description of one training variant. The model's
// vocab and feature sizes are overwritten from the corpus at train time and
// the per-site dropout specs resolve from the experiment-level choice.
struct ExperimentConfig {
  std::string preset = "Baseline";
  ModelConfig model;
  DropoutSpec dropout;
  SimilarityConfig sim;
  double alpha = 0.3;
  double lambda = 0.1;
  bool lambda_ramp = true;  // hold lambda at 0 for the first epoch
  OptimConfig optim;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  SeedConfig seeds;

  void validate() const;

  // Canonical key=value form; round-trips exactly (doubles use shortest
  // round-trip formatting).
  std::map<std::string, std::string> to_key_values() const;
  static ExperimentConfig from_key_values(const std::map<std::string, std::string>& kv);

  void save(const std::filesystem::path& path) const;
};

// key=value text files; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);
void save_key_values(const std::filesystem::path& path,
                     const std::map<std::string, std::string>& kv);

// Named experiment variants. Unknown names raise an error that lists the
// registry. Every preset resolves to a full ExperimentConfig.
std::vector<std::string> preset_names();
ExperimentConfig preset_config(const std::string& name);

// Applies overrides (same keys as to_key_values) on top of a base config.
ExperimentConfig apply_overrides(const ExperimentConfig& base,
                                 const std::map<std::string, std::string>& overrides);

}  // namespace spikereg
