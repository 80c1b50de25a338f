#include "behave/composition.hpp"

#include "behave/errors.hpp"
#include "behave/latent_geometry.hpp"
#include "behave/parallel.hpp"

namespace behave {

CompositePrompt split_prompt(const std::vector<int>& raw, int separator) {
  CompositePrompt out;
  std::vector<int> current;
  for (std::size_t i = 0; i <= raw.size(); ++i) {
    if (i == raw.size() || raw[i] == separator) {
      if (current.empty()) {
        if (raw.empty() && i == 0) fail(ErrorKind::EmptyClause, "prompt is empty");
        fail(ErrorKind::EmptyClause, "empty clause ending at token " + std::to_string(i));
      }
      out.clauses.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(raw[i]);
    }
  }
  return out;
}

ComposedLatents compose_latents(const std::vector<LatentTrajectory>& stages, int overlap, BlendMode mode) {
  require(!stages.empty(), ErrorKind::InvalidSpec, "nothing to compose");
  require(overlap >= 0, ErrorKind::OverlapTooLarge, "overlap must be non-negative");
  const Index d = stages.front().cols();
  const Index O = overlap;
  Index total = 0;
  for (std::size_t n = 0; n < stages.size(); ++n) {
    require(stages[n].cols() == d, ErrorKind::DimensionMismatch, "stages differ in latent width");
    if (O > 0 && stages.size() > 1 && stages[n].rows() < O + 1)
      fail(ErrorKind::OverlapTooLarge, "stage " + std::to_string(n) + " has " + std::to_string(stages[n].rows()) +
                                           " frames; overlap " + std::to_string(O) + " needs at least O + 1");
    total += stages[n].rows();
  }
  const Index boundaries = static_cast<Index>(stages.size()) - 1;
  if (mode == BlendMode::Replace) total -= boundaries * O;

  ComposedLatents out;
  out.latents.resize(total, d);
  Index cursor = 0;
  // Frames of the current stage already consumed by the previous blend.
  Index head_used = 0;
  Index stage_start = 0;
  for (std::size_t n = 0; n < stages.size(); ++n) {
    const LatentTrajectory& z = stages[n];
    const bool last = n + 1 == stages.size();
    const Index keep_end = last || O == 0 ? z.rows() : z.rows() - O;
    const Index body = keep_end - head_used;
    out.latents.middleRows(cursor, body) = z.middleRows(head_used, body);
    cursor += body;
    if (last) break;
    const LatentTrajectory& next = stages[n + 1];
    if (O > 0) {
      out.latents.middleRows(cursor, O) = blend_overlap(z.bottomRows(O), next.topRows(O));
      out.boundaries.push_back(cursor + O / 2 - 1);
      cursor += O;
    } else {
      out.boundaries.push_back(cursor - 1);
    }
    head_used = mode == BlendMode::Replace ? O : 0;
    out.stage_lengths.push_back(out.boundaries.back() + 1 - stage_start);
    stage_start = out.boundaries.back() + 1;
  }
  out.stage_lengths.push_back(total - stage_start);
  return out;
}

CompactProgram generate_program(const Generator& g, const std::vector<int>& tokens, const SamplerConfig& sampler,
                                std::uint64_t seed) {
  const FlowConfig& fc = g.flow.config();
  Rng rng(seed);
  const Matrix noise = gaussian_matrix(fc.frames, fc.d_m, rng);
  return sample(g.flow, text_context(g.vbb, tokens), sampler, noise);
}

LatentTrajectory decode_program(const Generator& g, const CompactProgram& m) {
  return project_rows(g.vbb.decode(m));
}

Generation generate_single(const Generator& g, const std::vector<int>& tokens, const SamplerConfig& sampler,
                           const Vector& s1, std::uint64_t seed) {
  Generation out;
  out.latents = decode_program(g, generate_program(g, tokens, sampler, seed));
  out.states = rollout(g.world, s1, out.latents);
  out.stage_lengths.push_back(out.latents.rows());
  return out;
}

Generation generate_composed(const Generator& g, const CompositePrompt& prompt, const CompositionConfig& cfg,
                             const Vector& s1, std::uint64_t seed, Exec exec) {
  require(prompt.size() >= 1, ErrorKind::EmptyClause, "prompt has no clauses");
  require(cfg.stage_len >= 1, ErrorKind::InvalidSpec, "stage_len must be positive");
  std::vector<LatentTrajectory> stages(static_cast<std::size_t>(prompt.size()));
  parallel_for(prompt.size(), exec, [&](std::ptrdiff_t n) {
    const auto& clause = prompt.clauses[static_cast<std::size_t>(n)];
    const LatentTrajectory z =
        decode_program(g, generate_program(g, clause, cfg.sampler, mix_seed(seed, static_cast<std::uint64_t>(n))));
    require(z.rows() >= cfg.stage_len, ErrorKind::InvalidSpec,
            "stage_len " + std::to_string(cfg.stage_len) + " exceeds the decoded length " + std::to_string(z.rows()));
    stages[static_cast<std::size_t>(n)] = z.topRows(cfg.stage_len);
  });
  ComposedLatents composed = compose_latents(stages, cfg.overlap, cfg.mode);
  Generation out;
  out.states = rollout(g.world, s1, composed.latents);
  out.latents = std::move(composed.latents);
  out.boundaries = std::move(composed.boundaries);
  for (Index b : out.boundaries) out.state_boundaries.push_back(b + 1);
  out.stage_lengths = std::move(composed.stage_lengths);
  return out;
}

std::vector<Index> uniform_boundaries(Index frames, int n) {
  require(n >= 1 && frames >= n, ErrorKind::InvalidSpec, "cannot split into that many segments");
  std::vector<Index> out;
  for (int k = 1; k < n; ++k) out.push_back(frames * k / n - 1);
  return out;
}

}  // namespace behave
