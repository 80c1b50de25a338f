#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "behave/json_io.hpp"
#include "behave/synthetic_world.hpp"

namespace behave {

/// Absolute slack on every theorem inequality.
inline constexpr double kBoundTolerance = 1e-9;

struct Prop1Report {
  double V = 0.0;
  int m = 0;
  double delta = 0.0;
  int segments = 0;
  double max_latent_dev = 0.0;
  double bound_latent = 0.0;
  std::vector<double> max_rollout_err_per_t;
  std::vector<double> bound_per_t;
  /// Negative when not requested.
  double uniform_bound = -1.0;
  bool all_pass = false;

  Json to_json() const;
};

/// Piecewise-constant approximation with at most m segments, rolled out next
/// to z from s1 under the mean dynamics, checked against the latent,
/// per-step and (optionally) uniform bounds. The uniform bound throws
/// UnstableWorld when L_s >= 1.
Prop1Report verify_prop1(const SyntheticWorld& world, const LatentTrajectory& z, int m, const Vector& s1,
                         bool uniform = true);

struct TvReport {
  int full_windows = 0;
  int excluded_windows = 0;
  double max_telescoping_err = 0.0;
  double rho = 0.0;
  double tv_full = 0.0;
  double c_motion = 0.0;
  double tv_bound = 0.0;
  /// Largest excess of a per-step jump over its own bound (<= 0 when it holds).
  double max_step_excess = 0.0;
  bool all_pass = false;

  Json to_json() const;
};

/// Telescoping identity of adjacent full-window averages (to 1e-10) and the
/// TV bound 2 sqrt(d_z) L_B / (rho L) C_motion over full-window indices.
/// Throws DegenerateRho when some full-window average is shorter than the
/// norm floor.
TvReport verify_tv_smoothing(const SyntheticWorld& world, const ExtractionConfig& cfg, const StateTrajectory& states);

struct Prop2Input {
  Vector e_Y;
  Vector e_M;
  std::vector<Vector> negatives;
  double Delta = 0.0;
  double tau = 0.07;
};

enum class Prop2Status { Pass, Fail, OutsideMarginRegime };
const char* to_string(Prop2Status s);

struct Prop2Report {
  double eta = 0.0;
  double Delta = 0.0;
  double threshold = 0.0;  // eta + sqrt(2 eta)
  double min_gap = 0.0;
  double gap_bound = 0.0;  // Delta - threshold
  double p_softmax = 0.0;
  double p_bound = 0.0;
  bool retrieval_correct = false;
  Prop2Status status = Prop2Status::Fail;

  Json to_json() const;
};

/// Checks unit norms (1e-9) and the negatives' margin precondition
/// (PreconditionViolated otherwise). Inside the margin regime the retrieval
/// claim, the gap bound and the softmax bound must all hold; outside it the
/// report says so instead of failing.
Prop2Report verify_prop2(const Prop2Input& in);

/// Latent trajectory of T frames on the sqrt(d) sphere whose consecutive
/// frames are exactly V / (T - 1) apart (random tangent directions).
LatentTrajectory random_sphere_walk(int T, int d, double V, Rng& rng);

/// Random instance with a guaranteed margin: eta and the excess over the
/// threshold are drawn from the given ranges.
Prop2Input random_prop2_instance(Rng& rng, int dim = 8, int max_negatives = 20);

struct Prop1Cell {
  double L_s = 0.8;
  double L_z = 1.0;
  double V = 4.0;
  int m = 4;
  std::uint64_t seed = 0;
};

struct Prop1SweepRow {
  Prop1Cell cell;
  double max_err = 0.0;
  double uniform_bound = 0.0;
  double tightness = 0.0;
  bool pass = false;
};

struct SweepGrid {
  std::vector<double> L_s{0.5, 0.8, 0.95};
  std::vector<double> L_z{1.0};
  std::vector<double> V{2.0, 8.0};
  std::vector<int> m{2, 4, 8, 16};
  std::vector<std::uint64_t> seeds{1};
  int T = 64;
  int d_z = 8;

  std::vector<Prop1Cell> cells() const;
};

SweepGrid sweep_grid_from_json(const Json& j);
Json sweep_grid_to_json(const SweepGrid& g);

std::vector<Prop1SweepRow> sweep_prop1(const SweepGrid& grid, Exec exec = Exec::Parallel);
std::string sweep_csv(const std::vector<Prop1SweepRow>& rows);

struct SuiteResult {
  int instances = 0;
  int passed = 0;
  /// Instances outside the claim's regime (Prop. 2 only); not failures.
  int outside = 0;
  double worst_slack = 0.0;
  std::string first_failure;

  bool ok() const { return passed + outside == instances; }
  Json to_json() const;
};

/// Random worlds with L_s in [0.3, 0.95], random walks and m in {2, 4, 8, 16}.
SuiteResult run_prop1_suite(int instances, std::uint64_t seed, Exec exec = Exec::Parallel);
SuiteResult run_prop2_suite(int instances, std::uint64_t seed, Exec exec = Exec::Parallel);
/// Trajectories from random worlds driven by behaviour-like latent scripts.
SuiteResult run_tv_suite(int instances, std::uint64_t seed, Exec exec = Exec::Parallel);

}  // namespace behave
