#pragma once

#include <vector>

#include "behave/types.hpp"

namespace behave {

inline constexpr double kDefaultNormFloor = 1e-8;

/// Contiguous segments of a trajectory, given by 0-based start indices.
/// The first start is always 0 and starts are strictly increasing.
struct SegmentPartition {
  std::vector<Index> starts;

  std::size_t segment_count() const { return starts.size(); }
  /// Segment containing frame t.
  std::size_t segment_of(Index t) const;
};

struct PiecewiseApprox {
  LatentTrajectory approx;
  SegmentPartition partition;
  double total_variation = 0.0;
  double delta = 0.0;
};

/// sqrt(d) * u / ||u||. Throws ZeroNormInput when ||u|| < norm_floor.
Vector project_to_sphere(const Vector& u, double norm_floor = kDefaultNormFloor);

/// Row-wise project_to_sphere.
LatentTrajectory project_rows(const Matrix& frames, double norm_floor = kDefaultNormFloor);

/// Path length sum_t ||z_{t+1} - z_t||.
double total_variation(const LatentTrajectory& z);

/// Greedy piecewise-constant approximation with at most m segments. Each
/// segment's internal path length is at most delta = TV / (m - 1) and every
/// frame is replaced by the first frame of its segment. When m >= T every
/// frame gets its own segment.
PiecewiseApprox piecewise_constant_approx(const LatentTrajectory& z, int m);

/// Linear cross-fade of two equally shaped windows:
/// row o (1-based) = (1 - rho_o) tail_o + rho_o head_o, rho_o = o / (O + 1).
/// With reproject set, blended rows are pushed back onto the sphere.
Matrix blend_overlap(const Matrix& tail, const Matrix& head, bool reproject = false,
                     double norm_floor = kDefaultNormFloor);

/// max_t ||a_t - b_t||.
double max_deviation(const Matrix& a, const Matrix& b);

/// max_t | ||z_t|| - sqrt(d) |, a diagnostic for frames that left the sphere.
double max_sphere_deviation(const LatentTrajectory& z);

/// Throws NonFiniteInput if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

}  // namespace behave
