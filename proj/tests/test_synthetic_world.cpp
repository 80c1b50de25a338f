#include <doctest.h>

#include <cmath>

#include "behave/errors.hpp"
#include "behave/synthetic_world.hpp"

using namespace behave;

namespace {

ErrorKind kind_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::FormatError;
}

SyntheticWorld plain_world(Matrix A_s, Matrix A_a, Matrix W_s, Matrix W_z, Matrix B, double sigma = 0.1) {
  return SyntheticWorld(std::move(A_s), std::move(A_a), std::move(W_s), std::move(W_z), sigma, std::move(B));
}

// Largest singular value from the SVD, independent of the power iteration.
double svd_norm(const Matrix& a) { return Eigen::JacobiSVD<Matrix>(a).singularValues()(0); }

}  // namespace

TEST_CASE("operator norms agree with the SVD") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = gaussian_matrix(uniform_int(rng, 1, 9), uniform_int(rng, 1, 9), rng);
    CHECK(operator_norm(a) == doctest::Approx(svd_norm(a)).epsilon(1e-9));
  }
  CHECK(operator_norm(Matrix::Zero(3, 2)) == 0.0);
}

TEST_CASE("constructed worlds hit their Lipschitz targets") {
  for (double target : {0.3, 0.8, 0.95}) {
    WorldSpec spec;
    spec.target_ls = target;
    spec.target_lz = 1.5;
    spec.seed = 4;
    const SyntheticWorld w = SyntheticWorld::random(spec);
    CHECK(w.L_s() < 1.0);
    CHECK(w.L_s() == doctest::Approx(target).epsilon(1e-8));
    CHECK(w.L_z() == doctest::Approx(1.5).epsilon(1e-8));
    CHECK(w.L_s() == doctest::Approx(svd_norm(w.A_s() + w.A_a() * w.W_s())).epsilon(1e-9));
    CHECK(w.L_z() == doctest::Approx(svd_norm(w.A_a() * w.W_z())).epsilon(1e-9));
    CHECK(w.L_B() == doctest::Approx(svd_norm(w.B())).epsilon(1e-9));
  }
}

TEST_CASE("policy mean examples") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  CHECK(w.policy_mean(Vector::Zero(12), Vector::Zero(8)).norm() == 0.0);

  const SyntheticWorld id = plain_world(Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Identity(2, 2),
                                        Matrix::Zero(2, 3), Matrix::Ones(3, 2));
  Vector s(2);
  s << 1, 2;
  CHECK(id.policy_mean(s, Vector::Ones(3)) == s);
  CHECK(kind_of([&] { id.policy_mean(Vector::Zero(3), Vector::Ones(3)); }) == ErrorKind::DimensionMismatch);
  CHECK(kind_of([&] { id.policy_mean(s, Vector::Ones(2)); }) == ErrorKind::DimensionMismatch);

  Rng rng(6);
  const double lz_pol = svd_norm(w.W_z());
  for (int trial = 0; trial < 200; ++trial) {
    const Vector st = gaussian_vector(12, rng);
    const Vector z1 = gaussian_vector(8, rng), z2 = gaussian_vector(8, rng);
    CHECK((w.policy_mean(st, z1) - w.policy_mean(st, z2)).norm() <= lz_pol * (z1 - z2).norm() * (1 + 1e-12));
  }
}

TEST_CASE("step examples") {
  const SyntheticWorld zero = plain_world(Matrix::Zero(3, 3), Matrix::Zero(3, 2), Matrix::Zero(2, 3),
                                          Matrix::Zero(2, 2), Matrix::Ones(2, 3));
  Rng rng(1);
  CHECK(zero.step(gaussian_vector(3, rng), gaussian_vector(2, rng)).norm() == 0.0);
  const SyntheticWorld ident = plain_world(Matrix::Identity(3, 3), Matrix::Zero(3, 2), Matrix::Ones(2, 3),
                                           Matrix::Ones(2, 2), Matrix::Ones(2, 3));
  const Vector s = gaussian_vector(3, rng);
  CHECK(ident.step(s, gaussian_vector(2, rng)) == s);
}

TEST_CASE("closed loop satisfies the Lipschitz inequality") {
  WorldSpec spec;
  spec.seed = 9;
  const SyntheticWorld w = SyntheticWorld::random(spec);
  Rng rng(10);
  for (int trial = 0; trial < 10000; ++trial) {
    const Vector s = gaussian_vector(12, rng, 3.0), s2 = gaussian_vector(12, rng, 3.0);
    const Vector z = gaussian_vector(8, rng), z2 = gaussian_vector(8, rng);
    const double lhs = (w.step(s, z) - w.step(s2, z2)).norm();
    const double rhs = w.L_s() * (s - s2).norm() + w.L_z() * (z - z2).norm();
    REQUIRE(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("rollout examples") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  Rng rng(12);
  const Vector s1 = gaussian_vector(12, rng);
  const StateTrajectory empty = rollout(w, s1, Matrix(0, 8));
  REQUIRE(empty.rows() == 1);
  CHECK(empty.row(0).transpose() == s1);

  const SyntheticWorld ident = plain_world(Matrix::Identity(4, 4), Matrix::Zero(4, 2), Matrix::Zero(2, 4),
                                           Matrix::Zero(2, 3), Matrix::Ones(3, 4));
  const Vector s0 = gaussian_vector(4, rng);
  const StateTrajectory still = rollout(ident, s0, gaussian_matrix(7, 3, rng));
  CHECK(still.rows() == 8);
  for (Index t = 0; t < still.rows(); ++t) CHECK(still.row(t).transpose() == s0);

  const Matrix z = project_rows(gaussian_matrix(10, 8, rng));
  const StateTrajectory s = rollout(w, s1, z);
  CHECK(s.rows() == z.rows() + 1);
  for (Index t = 0; t < z.rows(); ++t)
    CHECK((s.row(t + 1).transpose() - w.step(s.row(t).transpose(), z.row(t).transpose())).norm() <= 1e-12);
}

TEST_CASE("one changed latent frame moves later states within the unrolled bound") {
  WorldSpec spec;
  spec.seed = 21;
  const SyntheticWorld w = SyntheticWorld::random(spec);
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const Index T = 20;
    const Matrix z = project_rows(gaussian_matrix(T, 8, rng));
    Matrix zt = z;
    const Index j = uniform_int(rng, 0, static_cast<int>(T) - 1);
    zt.row(j) = project_to_sphere(gaussian_vector(8, rng)).transpose();
    const Vector s1 = gaussian_vector(12, rng);
    const StateTrajectory a = rollout(w, s1, z), b = rollout(w, s1, zt);
    for (Index t = 0; t <= T; ++t) {
      // State t (0-based) has seen latents 0..t-1.
      double bound = 0.0;
      for (Index k = 0; k < t; ++k) bound += std::pow(w.L_s(), double(t - 1 - k)) * (zt.row(k) - z.row(k)).norm();
      bound *= w.L_z();
      CHECK((a.row(t) - b.row(t)).norm() <= bound + 1e-9);
    }
  }
}

TEST_CASE("a diverging rollout is reported") {
  const SyntheticWorld grow = plain_world(Matrix::Identity(1, 1) * 1e200, Matrix::Zero(1, 1), Matrix::Zero(1, 1),
                                          Matrix::Zero(1, 1), Matrix::Ones(1, 1));
  CHECK(kind_of([&] { rollout(grow, Vector::Ones(1), Matrix::Ones(3, 1)); }) == ErrorKind::NonFiniteState);
}

TEST_CASE("extraction with a one-frame window projects B s") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  Rng rng(30);
  const StateTrajectory s = gaussian_matrix(6, 12, rng);
  const LatentTrajectory z = extract_latents(w, ExtractionConfig{1}, s);
  REQUIRE(z.rows() == 5);
  for (Index t = 0; t < 5; ++t) {
    const Vector expect = project_to_sphere(w.B() * s.row(t + 1).transpose());
    CHECK((z.row(t).transpose() - expect).norm() <= 1e-12);
    CHECK(z.row(t).norm() == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
  }
}

TEST_CASE("constant states give a constant latent trajectory") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  Rng rng(31);
  const Vector s = gaussian_vector(12, rng);
  const StateTrajectory states = s.transpose().replicate(9, 1);
  const LatentTrajectory z = extract_latents(w, ExtractionConfig{3}, states);
  CHECK(total_variation(z) <= 1e-12);
}

TEST_CASE("windowed means match hand-unrolled sums for L = 3, T = 4") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  Rng rng(32);
  const StateTrajectory s = gaussian_matrix(4, 12, rng);
  const Matrix& B = w.B();
  const Vector b1 = B * s.row(1).transpose(), b2 = B * s.row(2).transpose(), b3 = B * s.row(3).transpose();
  const Matrix means = windowed_backward_means(w, ExtractionConfig{3}, s);
  REQUIRE(means.rows() == 3);
  CHECK((means.row(0).transpose() - (b1 + b2 + b3) / 3.0).norm() <= 1e-12);
  CHECK((means.row(1).transpose() - (b2 + b3) / 2.0).norm() <= 1e-12);
  CHECK((means.row(2).transpose() - b3).norm() <= 1e-12);
  CHECK(kind_of([&] { extract_latents(w, ExtractionConfig{0}, s); }) == ErrorKind::InvalidSpec);
  CHECK(kind_of([&] { extract_latents(w, ExtractionConfig{2}, s.topRows(1)); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("zero backward embedding is rejected") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  CHECK(kind_of([&] { extract_latents(w, ExtractionConfig{2}, Matrix::Zero(5, 12)); }) == ErrorKind::ZeroNormInput);
}

TEST_CASE("adjacent full-window averages telescope") {
  WorldSpec spec;
  spec.seed = 33;
  const SyntheticWorld w = SyntheticWorld::random(spec);
  Rng rng(34);
  const Index L = 4;
  const StateTrajectory s = rollout(w, gaussian_vector(12, rng), project_rows(gaussian_matrix(30, 8, rng)));
  const Matrix means = windowed_backward_means(w, ExtractionConfig{static_cast<int>(L)}, s);
  const Index T = s.rows();
  for (Index t = 0; t + 1 <= T - 1 - L; ++t) {
    const Vector lhs = (means.row(t + 1) - means.row(t)).transpose();
    const Vector rhs = w.B() * (s.row(t + L + 1) - s.row(t + 1)).transpose() / double(L);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("steady-state backward map recovers a held latent") {
  const SyntheticWorld w = SyntheticWorld::random(WorldSpec{});
  Rng rng(35);
  const Vector z = project_to_sphere(gaussian_vector(8, rng));
  CHECK((project_to_sphere(w.backward(w.steady_state(z))) - z).norm() <= 1e-9);
  const StateTrajectory s = rollout(w, Vector::Zero(12), z.transpose().replicate(200, 1));
  const LatentTrajectory ex = extract_latents(w, ExtractionConfig{4}, s);
  CHECK((ex.row(150) - z.transpose()).norm() <= 1e-6);
}

TEST_CASE("action KL examples") {
  const SyntheticWorld one = plain_world(Matrix::Zero(1, 1), Matrix::Zero(1, 2), Matrix::Zero(2, 1),
                                         Matrix::Identity(2, 2), Matrix::Ones(2, 1), 1.0);
  Matrix z(1, 2), zh(1, 2);
  z << 0, 0;
  zh << 3, 4;
  CHECK(action_kl(one, Matrix::Zero(1, 1), z, zh) == doctest::Approx(12.5).epsilon(1e-15));
  CHECK(action_kl(one, Matrix::Zero(1, 1), z, z) == 0.0);
  CHECK(kind_of([&] { action_kl(one, Matrix::Zero(1, 1), z, Matrix::Zero(2, 2)); }) == ErrorKind::DimensionMismatch);
  CHECK(kind_of([&] { action_kl(one, Matrix::Zero(4, 1), z, z); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("action KL matches a Monte-Carlo estimate") {
  WorldSpec spec;
  spec.state_dim = 4;
  spec.action_dim = 3;
  spec.d_z = 3;
  spec.sigma_pi = 0.5;
  spec.seed = 40;
  const SyntheticWorld w = SyntheticWorld::random(spec);
  Rng rng(41);
  const Matrix z = project_rows(gaussian_matrix(1, 3, rng));
  const Matrix zh = project_rows(gaussian_matrix(1, 3, rng));
  const StateTrajectory states = gaussian_matrix(2, 4, rng);
  const double exact = action_kl(w, states, z, zh);

  const Vector s = states.row(0).transpose();
  const Vector mu_hat = w.policy_mean(s, zh.row(0).transpose());
  const Vector mu = w.policy_mean(s, z.row(0).transpose());
  const double var = spec.sigma_pi * spec.sigma_pi;
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector a = mu_hat + gaussian_vector(3, rng, spec.sigma_pi);
    const double log_ratio = ((a - mu).squaredNorm() - (a - mu_hat).squaredNorm()) / (2.0 * var);
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(mean - exact) <= 3.0 * se);
}
