#include "behave/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "behave/errors.hpp"

namespace behave {

double operator_norm(const Matrix& a, double rel_tol, int max_iter) {
  if (a.size() == 0) return 0.0;
  Rng rng(0x5eedULL);
  Vector v = gaussian_vector(a.cols(), rng);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Vector av = a * v;
    const double next = av.squaredNorm();
    Vector w = a.transpose() * av;
    const double wn = w.norm();
    if (wn == 0.0) return std::sqrt(next);
    v = w / wn;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  // One more Rayleigh quotient at the converged vector.
  return std::sqrt(std::max(lambda, (a * v).squaredNorm()));
}

SyntheticWorld::SyntheticWorld(Matrix A_s, Matrix A_a, Matrix W_s, Matrix W_z, double sigma_pi, Matrix B)
    : A_s_(std::move(A_s)),
      A_a_(std::move(A_a)),
      W_s_(std::move(W_s)),
      W_z_(std::move(W_z)),
      B_(std::move(B)),
      sigma_pi_(sigma_pi) {
  const Index n = A_s_.rows();
  require(n >= 1 && A_s_.cols() == n, ErrorKind::DimensionMismatch, "A_s must be square");
  require(A_a_.rows() == n, ErrorKind::DimensionMismatch, "A_a rows must equal state_dim");
  require(W_s_.rows() == A_a_.cols() && W_s_.cols() == n, ErrorKind::DimensionMismatch,
          "W_s must be [action_dim x state_dim]");
  require(W_z_.rows() == A_a_.cols() && W_z_.cols() >= 1, ErrorKind::DimensionMismatch,
          "W_z must be [action_dim x d_z]");
  require(B_.rows() == W_z_.cols() && B_.cols() == n, ErrorKind::DimensionMismatch,
          "B must be [d_z x state_dim]");
  require(sigma_pi_ > 0.0, ErrorKind::InvalidSpec, "sigma_pi must be positive");
  state_gain_ = A_s_ + A_a_ * W_s_;
  latent_gain_ = A_a_ * W_z_;
  L_s_ = operator_norm(state_gain_);
  L_z_ = operator_norm(latent_gain_);
  L_B_ = operator_norm(B_);
}

SyntheticWorld SyntheticWorld::random(const WorldSpec& spec) {
  require(spec.state_dim >= 1 && spec.action_dim >= 1 && spec.d_z >= 1, ErrorKind::InvalidSpec,
          "world dimensions must be positive");
  require(spec.target_ls > 0.0, ErrorKind::InvalidSpec, "target_ls must be positive");
  Rng rng(spec.seed);
  const double n = spec.state_dim;
  Matrix A_s = gaussian_matrix(spec.state_dim, spec.state_dim, rng, 1.0 / std::sqrt(n));
  Matrix A_a = gaussian_matrix(spec.state_dim, spec.action_dim, rng, 1.0 / std::sqrt(n));
  Matrix W_s = gaussian_matrix(spec.action_dim, spec.state_dim, rng, 1.0 / std::sqrt(n));
  Matrix W_z = gaussian_matrix(spec.action_dim, spec.d_z, rng, 1.0 / std::sqrt(double(spec.d_z)));
  Matrix B_random = gaussian_matrix(spec.d_z, spec.state_dim, rng, 1.0 / std::sqrt(n));

  const double kappa = spec.target_ls / operator_norm(A_s + A_a * W_s);
  A_s *= kappa;
  W_s *= kappa;
  if (spec.target_lz) {
    require(*spec.target_lz > 0.0, ErrorKind::InvalidSpec, "target_lz must be positive");
    W_z *= *spec.target_lz / operator_norm(A_a * W_z);
  }

  Matrix B;
  if (spec.backward == BackwardMapKind::SteadyStateInverse) {
    require(spec.state_dim >= spec.d_z, ErrorKind::InvalidSpec,
            "steady-state backward map needs state_dim >= d_z");
    require(spec.target_ls < 1.0, ErrorKind::InvalidSpec, "steady-state backward map needs target_ls < 1");
    const Matrix M = A_s + A_a * W_s;
    const Matrix I = Matrix::Identity(spec.state_dim, spec.state_dim);
    const Matrix gain = (I - M).partialPivLu().solve(A_a * W_z);
    B = gain.completeOrthogonalDecomposition().pseudoInverse();
  } else {
    B = std::move(B_random);
  }
  return SyntheticWorld(std::move(A_s), std::move(A_a), std::move(W_s), std::move(W_z), spec.sigma_pi,
                        std::move(B));
}

void SyntheticWorld::check_state(const Vector& s) const {
  if (s.size() != state_dim())
    fail(ErrorKind::DimensionMismatch,
         "state has " + std::to_string(s.size()) + " entries, world expects " + std::to_string(state_dim()));
}

void SyntheticWorld::check_latent(const Vector& z) const {
  if (z.size() != d_z())
    fail(ErrorKind::DimensionMismatch,
         "latent has " + std::to_string(z.size()) + " entries, world expects " + std::to_string(d_z()));
}

Vector SyntheticWorld::policy_mean(const Vector& s, const Vector& z) const {
  check_state(s);
  check_latent(z);
  return W_s_ * s + W_z_ * z;
}

Vector SyntheticWorld::step(const Vector& s, const Vector& z) const {
  return A_s_ * s + A_a_ * policy_mean(s, z);
}

Vector SyntheticWorld::backward(const Vector& s) const {
  check_state(s);
  return B_ * s;
}

Vector SyntheticWorld::steady_state(const Vector& z) const {
  check_latent(z);
  if (L_s_ >= 1.0) fail(ErrorKind::UnstableWorld, "no steady state guarantee with L_s >= 1");
  const Matrix I = Matrix::Identity(state_dim(), state_dim());
  return (I - state_gain_).partialPivLu().solve(latent_gain_ * z);
}

StateTrajectory rollout(const SyntheticWorld& world, const Vector& s1, const LatentTrajectory& z) {
  if (z.rows() > 0 && z.cols() != world.d_z())
    fail(ErrorKind::DimensionMismatch, "latent sequence width does not match world d_z");
  if (s1.size() != world.state_dim()) fail(ErrorKind::DimensionMismatch, "initial state dimension");
  StateTrajectory states(z.rows() + 1, world.state_dim());
  states.row(0) = s1.transpose();
  for (Index t = 0; t < z.rows(); ++t) {
    const Vector next = world.step(states.row(t).transpose(), z.row(t).transpose());
    if (!next.allFinite()) fail(ErrorKind::NonFiniteState, "rollout diverged at step " + std::to_string(t));
    states.row(t + 1) = next.transpose();
  }
  return states;
}

StateTrajectory rollout_noisy(const SyntheticWorld& world, const Vector& s1, const LatentTrajectory& z,
                              double noise_std, Rng& rng) {
  if (s1.size() != world.state_dim()) fail(ErrorKind::DimensionMismatch, "initial state dimension");
  StateTrajectory states(z.rows() + 1, world.state_dim());
  states.row(0) = s1.transpose();
  for (Index t = 0; t < z.rows(); ++t) {
    Vector next = world.step(states.row(t).transpose(), z.row(t).transpose());
    next += gaussian_vector(next.size(), rng, noise_std);
    if (!next.allFinite()) fail(ErrorKind::NonFiniteState, "rollout diverged at step " + std::to_string(t));
    states.row(t + 1) = next.transpose();
  }
  return states;
}

Matrix windowed_backward_means(const SyntheticWorld& world, const ExtractionConfig& cfg,
                               const StateTrajectory& states) {
  require(cfg.lookahead >= 1, ErrorKind::InvalidSpec, "lookahead must be >= 1");
  require(states.rows() >= 2, ErrorKind::DimensionMismatch, "latent extraction needs at least two states");
  if (states.cols() != world.state_dim()) fail(ErrorKind::DimensionMismatch, "state width");
  require_finite(states, "state trajectory");
  const Index T = states.rows();
  // Backward embeddings of every state, one row each.
  const Matrix embedded = states * world.B().transpose();
  Matrix means(T - 1, world.d_z());
  for (Index t = 0; t + 1 < T; ++t) {
    // 0-based t corresponds to 1-based t+1, whose window starts at state t+1.
    const Index H = std::min<Index>(cfg.lookahead, T - 1 - t);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(world.d_z());
    for (Index k = 0; k < H; ++k) acc += embedded.row(t + 1 + k);
    means.row(t) = acc / static_cast<double>(H);
  }
  return means;
}

LatentTrajectory extract_latents(const SyntheticWorld& world, const ExtractionConfig& cfg,
                                 const StateTrajectory& states) {
  return project_rows(windowed_backward_means(world, cfg, states), cfg.norm_floor);
}

double action_kl(const SyntheticWorld& world, const StateTrajectory& states, const LatentTrajectory& z,
                 const LatentTrajectory& z_hat) {
  if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols())
    fail(ErrorKind::DimensionMismatch, "action_kl latent sequences differ in shape");
  if (states.rows() != z.rows() && states.rows() != z.rows() + 1)
    fail(ErrorKind::DimensionMismatch, "action_kl needs T_z or T_z + 1 states");
  require(z.rows() >= 1, ErrorKind::DimensionMismatch, "action_kl of an empty sequence");
  const double inv_two_var = 1.0 / (2.0 * world.sigma_pi() * world.sigma_pi());
  double total = 0.0;
  for (Index t = 0; t < z.rows(); ++t) {
    const Vector s = states.row(t).transpose();
    const Vector mean_hat = world.policy_mean(s, z_hat.row(t).transpose());
    const Vector mean_ref = world.policy_mean(s, z.row(t).transpose());
    total += (mean_hat - mean_ref).squaredNorm() * inv_two_var;
  }
  return total / static_cast<double>(z.rows());
}

}  // namespace behave
