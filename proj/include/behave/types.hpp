#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace behave {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Frames are rows: [T x d_z].
using LatentTrajectory = Matrix;
/// Frames are rows: [T x state_dim].
using StateTrajectory = Matrix;
/// Program frames are rows: [T_m x d_m].
using CompactProgram = Matrix;

using Rng = std::mt19937_64;

/// Kernels that have an OpenMP path also keep a plain serial path; tests pin
/// the two against each other.
enum class Exec { Serial, Parallel };

/// splitmix64 finalizer, used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

inline Vector gaussian_vector(Index n, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = normal(rng);
  return out;
}

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace behave
