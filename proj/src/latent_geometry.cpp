#include "behave/latent_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "behave/errors.hpp"

namespace behave {

std::size_t SegmentPartition::segment_of(Index t) const {
  auto it = std::upper_bound(starts.begin(), starts.end(), t);
  return static_cast<std::size_t>(std::distance(starts.begin(), it)) - 1;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) fail(ErrorKind::NonFiniteInput, std::string(what) + " has non-finite entries");
}

Vector project_to_sphere(const Vector& u, double norm_floor) {
  require(u.size() >= 1, ErrorKind::DimensionMismatch, "projection of an empty vector");
  require(norm_floor > 0.0, ErrorKind::RangeError, "norm_floor must be positive");
  require_finite(u, "projection input");
  const double norm = u.norm();
  if (norm < norm_floor)
    fail(ErrorKind::ZeroNormInput, "norm " + std::to_string(norm) + " below floor");
  return (std::sqrt(static_cast<double>(u.size())) / norm) * u;
}

LatentTrajectory project_rows(const Matrix& frames, double norm_floor) {
  LatentTrajectory out(frames.rows(), frames.cols());
  for (Index t = 0; t < frames.rows(); ++t)
    out.row(t) = project_to_sphere(frames.row(t).transpose(), norm_floor).transpose();
  return out;
}

double total_variation(const LatentTrajectory& z) {
  require(z.rows() >= 1, ErrorKind::DimensionMismatch, "total variation of an empty trajectory");
  require_finite(z, "trajectory");
  double tv = 0.0;
  for (Index t = 0; t + 1 < z.rows(); ++t) tv += (z.row(t + 1) - z.row(t)).norm();
  return tv;
}

PiecewiseApprox piecewise_constant_approx(const LatentTrajectory& z, int m) {
  require(m >= 2, ErrorKind::RangeError, "piecewise approximation needs m >= 2");
  PiecewiseApprox out;
  out.total_variation = total_variation(z);
  out.delta = out.total_variation / static_cast<double>(m - 1);
  const Index T = z.rows();

  auto& starts = out.partition.starts;
  if (m >= T) {
    starts.resize(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) starts[static_cast<std::size_t>(t)] = t;
    out.approx = z;
    return out;
  }

  starts.push_back(0);
  double inside = 0.0;
  for (Index t = 1; t < T; ++t) {
    const double step = (z.row(t) - z.row(t - 1)).norm();
    if (inside + step <= out.delta) {
      inside += step;
    } else {
      starts.push_back(t);
      inside = 0.0;
    }
  }

  out.approx.resize(z.rows(), z.cols());
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const Index begin = starts[s];
    const Index end = s + 1 < starts.size() ? starts[s + 1] : T;
    for (Index t = begin; t < end; ++t) out.approx.row(t) = z.row(begin);
  }
  return out;
}

Matrix blend_overlap(const Matrix& tail, const Matrix& head, bool reproject, double norm_floor) {
  if (tail.rows() != head.rows() || tail.cols() != head.cols())
    fail(ErrorKind::ShapeMismatch, "blend windows differ in shape");
  require(tail.rows() >= 1, ErrorKind::RangeError, "blend overlap must be at least one frame");
  const Index O = tail.rows();
  Matrix out(O, tail.cols());
  for (Index o = 0; o < O; ++o) {
    const double rho = static_cast<double>(o + 1) / static_cast<double>(O + 1);
    out.row(o) = (1.0 - rho) * tail.row(o) + rho * head.row(o);
  }
  if (reproject) out = project_rows(out, norm_floor);
  return out;
}

double max_deviation(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorKind::ShapeMismatch, "max_deviation operands differ in shape");
  double worst = 0.0;
  for (Index t = 0; t < a.rows(); ++t) worst = std::max(worst, (a.row(t) - b.row(t)).norm());
  return worst;
}

double max_sphere_deviation(const LatentTrajectory& z) {
  const double radius = std::sqrt(static_cast<double>(z.cols()));
  double worst = 0.0;
  for (Index t = 0; t < z.rows(); ++t) worst = std::max(worst, std::abs(z.row(t).norm() - radius));
  return worst;
}

}  // namespace behave
