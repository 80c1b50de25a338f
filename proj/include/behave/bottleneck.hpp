#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "behave/alignment.hpp"
#include "behave/nn.hpp"
#include "behave/synthetic_world.hpp"

namespace behave {

struct BottleneckConfig {
  int d_z = 8;
  int d_m = 48;
  int width = 32;
  /// Stride-2 levels; compression factor is 2^levels.
  int levels = 3;
  int d_text = 32;
  int d_e = 32;
  int vocab_size = 9;
  double logit_scale_init = std::log(1.0 / 0.07);
  /// Right-pad sequences whose length is not a multiple of the compression
  /// factor by repeating the last frame; otherwise reject them.
  bool pad_inputs = true;

  int compression() const { return 1 << levels; }
};

struct LossConfig {
  double beta = 1e-4;
  double lambda_pi = 0.1;
  double lambda_sem = 0.35;
  double lambda_tok = 1.0;
  double lambda_frm = 1.0;

  MatchTemperatures temperatures() const { return {lambda_tok, lambda_frm}; }
};

/// Diagonal Gaussian over program frames.
struct Posterior {
  Matrix mu;       // [T_m x d_m]
  Matrix log_var;  // [T_m x d_m]
  /// Frames of the input before padding.
  Index input_frames = 0;
};

/// m = mu + exp(log_var / 2) * noise.
CompactProgram sample_posterior(const Posterior& p, const Matrix& noise);

/// Mean over frames and dims of 0.5 (mu^2 + sigma^2 - log sigma^2 - 1).
double kl_prior_loss(const Posterior& p);

/// (1/T) sum ||z_t - z_hat_t||^2 + (lambda_pi / T) sum KL(pi(.|s_t, z_hat_t) || pi(.|s_t, z_t)).
double reconstruction_loss(const LatentTrajectory& z, const LatentTrajectory& z_hat, const StateTrajectory& states,
                           const SyntheticWorld& world, double lambda_pi);

/// Text-aligned variational bottleneck. Encoder and decoder are strided /
/// upsampling temporal convolutions with one residual block per level; P_m
/// and P_y project program frames and text tokens into a shared space.
/// The token embedding table is fixed (seeded, unit-norm rows) and stored as
/// a non-trainable parameter block.
class BottleneckModel {
 public:
  BottleneckModel(const BottleneckConfig& cfg, std::uint64_t seed);

  const BottleneckConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  /// Padded length for a T-frame input (throws LengthNotCompressible when
  /// padding is disabled and T is not a multiple of the compression).
  Index padded_length(Index T) const;

  Posterior encode(const LatentTrajectory& z) const;
  /// c * T_m frames, in ambient space (not re-projected).
  LatentTrajectory decode(const CompactProgram& m) const;
  /// Encode with the posterior mean, decode, trim padding.
  LatentTrajectory reconstruct(const LatentTrajectory& z) const;

  /// Unit-norm P_m projection of every program frame.
  Matrix project_program(const CompactProgram& m) const;
  /// Unit-norm P_y projection of every token.
  Matrix project_text(const std::vector<int>& tokens) const;

  double logit_scale() const;  // gamma = exp(alpha)

  // Layer handles (public for the gradient code).
  struct Layers {
    nn::Conv1d enc_in;
    std::vector<nn::Conv1d> enc_down, enc_res;
    nn::Conv1d enc_mu, enc_logvar;
    nn::Conv1d dec_in;
    std::vector<nn::Conv1d> dec_up, dec_res;
    nn::Conv1d dec_out;
    nn::Linear proj_m, proj_y;
    int token_table = -1;
    int log_scale = -1;
  };
  const Layers& layers() const { return layers_; }

 private:
  BottleneckConfig cfg_;
  nn::ParameterStore params_;
  Layers layers_;
};

/// One training example.
struct VbbItem {
  const LatentTrajectory* latents = nullptr;
  const StateTrajectory* states = nullptr;
  const std::vector<int>* tokens = nullptr;
};

struct VbbLoss {
  double total = 0.0;
  double rec = 0.0;
  double kl = 0.0;
  double sem = 0.0;
};

/// Batch objective L_rec + beta L_KL + lambda_sem L_sem (reconstruction and
/// prior terms averaged over the batch). noises[i] is the reparameterization
/// noise of item i, shaped like its posterior. When grads is non-null it
/// receives the gradient of the total with respect to every parameter block.
/// The semantic term is skipped when lambda_sem == 0; otherwise the batch
/// needs at least two items.
VbbLoss vbb_loss(const BottleneckModel& model, const SyntheticWorld& world, const std::vector<VbbItem>& batch,
                 const std::vector<Matrix>& noises, const LossConfig& cfg, nn::Gradients* grads = nullptr,
                 Exec exec = Exec::Parallel);

/// Shape of the posterior (T_m, d_m) for a T-frame input.
std::pair<Index, Index> posterior_shape(const BottleneckModel& model, Index T);

/// Pooled, normalized joint-space embeddings.
Vector program_embedding(const BottleneckModel& model, const CompactProgram& m);
Vector latent_embedding(const BottleneckModel& model, const LatentTrajectory& z);
Vector text_embedding(const BottleneckModel& model, const std::vector<int>& tokens);
/// Mean of projected token embeddings (not re-normalized): the flow
/// generator's conditioning vector.
Vector text_context(const BottleneckModel& model, const std::vector<int>& tokens);

}  // namespace behave
