#pragma once

#include <cstdint>
#include <vector>

#include "behave/bottleneck.hpp"
#include "behave/flow.hpp"
#include "behave/synthetic_world.hpp"

namespace behave {

struct CompositePrompt {
  std::vector<std::vector<int>> clauses;

  int size() const { return static_cast<int>(clauses.size()); }
};

/// Clauses are the maximal separator-free runs of `raw`, in order.
/// Throws EmptyClause on leading, trailing or doubled separators.
CompositePrompt split_prompt(const std::vector<int>& raw, int separator);

enum class BlendMode {
  /// The O blended frames replace the last O frames of stage n and the first
  /// O frames of stage n + 1 (each boundary shortens the output by O).
  Replace,
  /// Stage n's last O frames are blended toward stage n + 1's first O frames;
  /// stage n + 1 is kept whole.
  InPlace,
};

struct ComposedLatents {
  LatentTrajectory latents;
  /// Per boundary, the index of the last frame credited to the earlier stage.
  /// A blend window is split at its midpoint.
  std::vector<Index> boundaries;
  /// Frames credited to each stage in the output.
  std::vector<Index> stage_lengths;
};

ComposedLatents compose_latents(const std::vector<LatentTrajectory>& stages, int overlap,
                                BlendMode mode = BlendMode::Replace);

struct CompositionConfig {
  int overlap = 4;
  /// Frames taken from each clause's decoded trajectory.
  int stage_len = 24;
  BlendMode mode = BlendMode::Replace;
  SamplerConfig sampler;
};

/// Frozen models used at generation time.
struct Generator {
  const BottleneckModel& vbb;
  const FlowModel& flow;
  const SyntheticWorld& world;
};

/// One program for the prompt, drawn from noise seeded by `seed`.
CompactProgram generate_program(const Generator& g, const std::vector<int>& tokens, const SamplerConfig& sampler,
                                std::uint64_t seed);

/// Decoded program projected onto the latent sphere.
LatentTrajectory decode_program(const Generator& g, const CompactProgram& m);

struct Generation {
  StateTrajectory states;
  LatentTrajectory latents;
  /// Boundaries in latent frames (see ComposedLatents).
  std::vector<Index> boundaries;
  /// Boundaries as state indices: the last state reached under the earlier
  /// stage, i.e. latent boundary + 1.
  std::vector<Index> state_boundaries;
  std::vector<Index> stage_lengths;
};

/// Whole prompt through one program (no clause splitting).
Generation generate_single(const Generator& g, const std::vector<int>& tokens, const SamplerConfig& sampler,
                           const Vector& s1, std::uint64_t seed);

/// One program per clause (clause n seeded with mix_seed(seed, n)), decoded,
/// cropped to stage_len, composed and rolled out from s1.
Generation generate_composed(const Generator& g, const CompositePrompt& prompt, const CompositionConfig& cfg,
                             const Vector& s1, std::uint64_t seed, Exec exec = Exec::Parallel);

/// Boundaries splitting `frames` into n near-equal segments (latent indices).
std::vector<Index> uniform_boundaries(Index frames, int n);

}  // namespace behave
