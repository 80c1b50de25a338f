#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "behave/bottleneck.hpp"
#include "behave/composition.hpp"
#include "behave/dataset.hpp"
#include "behave/flow.hpp"
#include "behave/json_io.hpp"
#include "behave/training.hpp"

namespace behave {

inline constexpr int kConfigSchema = 1;

struct EvalConfig {
  /// Size of a fresh test set drawn from the same world (never trained on).
  int test_samples = 256;
  int retrieval_batch = 32;
  /// Draws per single-behaviour prompt for the prototype check and diversity.
  int draws_per_prompt = 10;
  /// Paired compose / single-shot trials on random 3-clause prompts.
  int composition_trials = 120;
  int composition_clauses = 3;
};

/// Everything one pipeline run needs. Parsed strictly: unknown keys are
/// rejected with ConfigInvalid.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/default";
  DatasetSpec dataset;
  BottleneckConfig bottleneck;
  LossConfig loss;
  OptimConfig vbb_optim;
  FlowConfig flow;
  OptimConfig flow_optim;
  SamplerConfig sampler;
  CompositionConfig composition;
  EvalConfig eval;

  /// Derived seeds for each stage.
  std::uint64_t data_seed() const { return mix_seed(seed, 11); }
  std::uint64_t vbb_init_seed() const { return mix_seed(seed, 12); }
  std::uint64_t vbb_train_seed() const { return mix_seed(seed, 13); }
  std::uint64_t flow_init_seed() const { return mix_seed(seed, 14); }
  std::uint64_t flow_train_seed() const { return mix_seed(seed, 15); }
  std::uint64_t eval_seed() const { return mix_seed(seed, 16); }
  std::uint64_t test_data_seed() const { return mix_seed(seed, 17); }

  /// Bottleneck settings with the vocabulary size implied by the dataset.
  BottleneckConfig bottleneck_config() const;
  /// Flow settings with frame count and widths implied by the bottleneck.
  FlowConfig flow_config() const;
};

RunConfig default_run_config();
RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& c);

/// Reads and validates a config file; BEHAVE_SEED, when set, overrides the seed.
RunConfig load_run_config(const std::filesystem::path& path);

/// Throws ConfigInvalid with the offending field named.
void validate(const RunConfig& c);

}  // namespace behave
