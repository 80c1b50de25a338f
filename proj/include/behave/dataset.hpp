#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "behave/json_io.hpp"
#include "behave/synthetic_world.hpp"

namespace behave {

/// Behaviour names are tokens 0..n-1; the clause separator "then" is token n.
class Vocabulary {
 public:
  explicit Vocabulary(int n_behaviors);

  int n_behaviors() const { return n_behaviors_; }
  int size() const { return n_behaviors_ + 1; }
  int separator() const { return n_behaviors_; }
  const std::string& name(int token) const;
  int lookup(const std::string& word) const;

  /// Whitespace tokenization; unknown words throw UnknownToken.
  std::vector<int> tokenize(const std::string& text) const;
  std::string render(const std::vector<int>& tokens) const;
  /// Prompt tokens for an ordered behaviour list, joined by the separator.
  std::vector<int> prompt_for(const std::vector<int>& behaviors) const;

 private:
  int n_behaviors_;
  std::vector<std::string> names_;
};

struct DatasetSpec {
  int n_behaviors = 8;
  int n_samples = 500;
  /// Latent frames per sample (T_z); states carry one more row.
  int traj_len = 64;
  /// Probability of a prompt having 1, 2, ... clauses.
  std::vector<double> clause_weights{0.4, 0.3, 0.3};
  int min_duration = 12;
  /// Per-sample offset added to a behaviour's direction.
  double direction_noise = 0.05;
  /// Per-frame jitter on the latent script.
  double frame_noise = 0.02;
  /// Additive state noise during rollout; 0 keeps mean dynamics.
  double state_noise = 0.0;
  WorldSpec world;
  ExtractionConfig extraction;
};

struct Sample {
  std::vector<int> prompt_tokens;
  StateTrajectory states;
  LatentTrajectory latents;
};

struct Dataset {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
};

/// Unit directions (scaled to radius sqrt(d_z)) that the behaviours command.
Matrix behavior_directions(const DatasetSpec& spec);

/// Latent script for an ordered behaviour list: each behaviour holds its
/// (noisy) direction for a random duration.
LatentTrajectory behavior_script(const DatasetSpec& spec, const Matrix& directions,
                                 const std::vector<int>& behaviors, Rng& rng);

/// Reproducible from (spec, seed): sample i draws from its own derived seed.
Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed, Exec exec = Exec::Parallel);

/// Behaviour ids of a prompt (separator tokens dropped).
std::vector<int> prompt_behaviors(const Vocabulary& vocab, const std::vector<int>& tokens);

void write_dataset_json(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_json(const std::filesystem::path& path);

Json dataset_spec_to_json(const DatasetSpec& spec);
/// Strict: unknown keys throw ConfigInvalid.
DatasetSpec dataset_spec_from_json(const Json& j);

}  // namespace behave
