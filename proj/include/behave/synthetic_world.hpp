#pragma once

#include <cstdint>
#include <optional>

#include "behave/latent_geometry.hpp"
#include "behave/types.hpp"

namespace behave {

/// Largest singular value by power iteration on A^T A.
double operator_norm(const Matrix& a, double rel_tol = 1e-10, int max_iter = 1000);

enum class BackwardMapKind {
  /// B is the pseudo-inverse of the steady-state gain (I - M)^{-1} N, so a
  /// held latent is recovered exactly once the state settles.
  SteadyStateInverse,
  Random,
};

struct WorldSpec {
  int state_dim = 12;
  int action_dim = 8;
  int d_z = 8;
  /// Operator norm of the closed-loop state gain after rescaling.
  double target_ls = 0.8;
  /// Optional operator norm of the closed-loop latent gain.
  std::optional<double> target_lz;
  double sigma_pi = 0.1;
  BackwardMapKind backward = BackwardMapKind::SteadyStateInverse;
  std::uint64_t seed = 1;
};

/// Linear stand-in for a frozen latent-conditioned policy plus environment:
///   a ~ N(W_s s + W_z z, sigma^2 I),   s' = A_s s + A_a a   (mean dynamics).
/// The closed loop F(s, z) = (A_s + A_a W_s) s + A_a W_z z is Lipschitz with
/// L_s = ||A_s + A_a W_s|| and L_z = ||A_a W_z||. The backward map is B s.
/// Immutable once built; the Lipschitz constants are computed from the
/// matrices at construction.
class SyntheticWorld {
 public:
  SyntheticWorld(Matrix A_s, Matrix A_a, Matrix W_s, Matrix W_z, double sigma_pi, Matrix B);

  static SyntheticWorld random(const WorldSpec& spec);

  int state_dim() const { return static_cast<int>(A_s_.rows()); }
  int action_dim() const { return static_cast<int>(A_a_.cols()); }
  int d_z() const { return static_cast<int>(W_z_.cols()); }
  double sigma_pi() const { return sigma_pi_; }

  const Matrix& A_s() const { return A_s_; }
  const Matrix& A_a() const { return A_a_; }
  const Matrix& W_s() const { return W_s_; }
  const Matrix& W_z() const { return W_z_; }
  const Matrix& B() const { return B_; }

  /// A_s + A_a W_s.
  const Matrix& state_gain() const { return state_gain_; }
  /// A_a W_z.
  const Matrix& latent_gain() const { return latent_gain_; }

  double L_s() const { return L_s_; }
  double L_z() const { return L_z_; }
  double L_B() const { return L_B_; }

  Vector policy_mean(const Vector& s, const Vector& z) const;
  Vector step(const Vector& s, const Vector& z) const;
  Vector backward(const Vector& s) const;
  /// Fixed point of the closed loop under a held latent.
  Vector steady_state(const Vector& z) const;

 private:
  void check_state(const Vector& s) const;
  void check_latent(const Vector& z) const;

  Matrix A_s_, A_a_, W_s_, W_z_, B_;
  double sigma_pi_;
  Matrix state_gain_, latent_gain_;
  double L_s_, L_z_, L_B_;
};

struct ExtractionConfig {
  int lookahead = 4;
  double norm_floor = kDefaultNormFloor;
};

/// Deterministic closed-loop rollout; returns z.rows() + 1 states with s1 first.
StateTrajectory rollout(const SyntheticWorld& world, const Vector& s1, const LatentTrajectory& z);

/// Rollout with additive Gaussian state noise (qualitative experiments only).
StateTrajectory rollout_noisy(const SyntheticWorld& world, const Vector& s1, const LatentTrajectory& z,
                              double noise_std, Rng& rng);

/// Lookahead-averaged backward embeddings before projection, one row per
/// t = 1..T-1: (1/H_t) sum_{k<H_t} B s_{t+1+k}, H_t = min(L, T - t).
Matrix windowed_backward_means(const SyntheticWorld& world, const ExtractionConfig& cfg,
                               const StateTrajectory& states);

/// Sphere-projected windowed means: the policy latents that explain `states`.
LatentTrajectory extract_latents(const SyntheticWorld& world, const ExtractionConfig& cfg,
                                 const StateTrajectory& states);

/// Mean per-step KL( N(mu(s_t, z_hat_t), s^2 I) || N(mu(s_t, z_t), s^2 I) ),
/// both evaluated at the reference states. `states` may carry T_z or T_z + 1
/// rows; only the first T_z are used.
double action_kl(const SyntheticWorld& world, const StateTrajectory& states, const LatentTrajectory& z,
                 const LatentTrajectory& z_hat);

}  // namespace behave
