#include "behave/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "behave/dataset.hpp"
#include "behave/errors.hpp"
#include "behave/latent_geometry.hpp"
#include "behave/parallel.hpp"

namespace behave {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Json Prop1Report::to_json() const {
  return Json{{"V", V},
              {"m", m},
              {"delta", delta},
              {"segments", segments},
              {"max_latent_dev", max_latent_dev},
              {"bound_latent", bound_latent},
              {"max_rollout_err_per_t", max_rollout_err_per_t},
              {"bound_per_t", bound_per_t},
              {"uniform_bound", uniform_bound},
              {"all_pass", all_pass}};
}

Prop1Report verify_prop1(const SyntheticWorld& world, const LatentTrajectory& z, int m, const Vector& s1,
                         bool uniform) {
  require(m >= 2, ErrorKind::InvalidSpec, "the approximation bound needs m >= 2");
  if (uniform && world.L_s() >= 1.0)
    fail(ErrorKind::UnstableWorld, "uniform rollout bound needs L_s < 1 (L_s = " + fmt(world.L_s()) + ")");
  const PiecewiseApprox approx = piecewise_constant_approx(z, m);
  Prop1Report r;
  r.V = approx.total_variation;
  r.m = m;
  r.delta = r.V / static_cast<double>(m - 1);
  r.segments = static_cast<int>(approx.partition.segment_count());
  r.max_latent_dev = max_deviation(z, approx.approx);
  r.bound_latent = r.delta;
  bool pass = r.segments <= m && r.max_latent_dev <= r.bound_latent + kBoundTolerance;

  const StateTrajectory s = rollout(world, s1, z);
  const StateTrajectory s_tilde = rollout(world, s1, approx.approx);
  const double Ls = world.L_s();
  const double Lz = world.L_z();
  // e_t for t = 1 .. T + 1; geometric sum sum_{j=1}^{t-1} L_s^{t-1-j}.
  double geometric = 0.0;
  double worst = 0.0;
  for (Index t = 0; t < s.rows(); ++t) {
    const double err = (s.row(t) - s_tilde.row(t)).norm();
    const double bound = Lz * r.delta * geometric;
    r.max_rollout_err_per_t.push_back(err);
    r.bound_per_t.push_back(bound);
    pass = pass && err <= bound + kBoundTolerance;
    worst = std::max(worst, err);
    geometric = geometric * Ls + 1.0;
  }
  if (uniform) {
    r.uniform_bound = Lz * r.delta / (1.0 - Ls);
    pass = pass && worst <= r.uniform_bound + kBoundTolerance;
  }
  r.all_pass = pass;
  return r;
}

Json TvReport::to_json() const {
  return Json{{"full_windows", full_windows},
              {"excluded_windows", excluded_windows},
              {"max_telescoping_err", max_telescoping_err},
              {"rho", rho},
              {"tv_full", tv_full},
              {"c_motion", c_motion},
              {"tv_bound", tv_bound},
              {"max_step_excess", max_step_excess},
              {"all_pass", all_pass}};
}

TvReport verify_tv_smoothing(const SyntheticWorld& world, const ExtractionConfig& cfg, const StateTrajectory& states) {
  const Index T = states.rows() - 1;
  const Index L = cfg.lookahead;
  require(L >= 1, ErrorKind::InvalidSpec, "lookahead must be positive");
  require(T >= L + 1, ErrorKind::InvalidSpec, "trajectory too short for two full lookahead windows");
  const Matrix zbar = windowed_backward_means(world, cfg, states);

  TvReport r;
  const Index full = T - L + 1;  // rows 0 .. T - L average exactly L states
  r.full_windows = static_cast<int>(full);
  r.excluded_windows = static_cast<int>(T - full);
  r.rho = INFINITY;
  for (Index t = 0; t < full; ++t) r.rho = std::min(r.rho, zbar.row(t).norm());
  if (r.rho < cfg.norm_floor) fail(ErrorKind::DegenerateRho, "a full-window average is below the norm floor");
  const LatentTrajectory z = extract_latents(world, cfg, states);

  const double d = static_cast<double>(world.d_z());
  const double lip = 2.0 * std::sqrt(d) * world.L_B() / (r.rho * static_cast<double>(L));
  r.max_step_excess = -INFINITY;
  for (Index t = 0; t + 1 < full; ++t) {
    const Vector lhs = (zbar.row(t + 1) - zbar.row(t)).transpose();
    const Vector rhs = (world.backward(states.row(t + L + 1).transpose()) -
                        world.backward(states.row(t + 1).transpose())) /
                       static_cast<double>(L);
    r.max_telescoping_err = std::max(r.max_telescoping_err, (lhs - rhs).cwiseAbs().maxCoeff());
    const double jump = (z.row(t + 1) - z.row(t)).norm();
    const double motion = (states.row(t + L + 1) - states.row(t + 1)).norm();
    r.tv_full += jump;
    r.c_motion += motion;
    r.max_step_excess = std::max(r.max_step_excess, jump - lip * motion);
  }
  r.tv_bound = lip * r.c_motion;
  r.all_pass = r.max_telescoping_err <= 1e-10 && r.max_step_excess <= kBoundTolerance &&
               r.tv_full <= r.tv_bound + kBoundTolerance;
  return r;
}

const char* to_string(Prop2Status s) {
  switch (s) {
    case Prop2Status::Pass: return "pass";
    case Prop2Status::Fail: return "fail";
    case Prop2Status::OutsideMarginRegime: return "outside margin regime";
  }
  return "?";
}

Json Prop2Report::to_json() const {
  return Json{{"eta", eta},         {"Delta", Delta},         {"threshold", threshold},
              {"min_gap", min_gap}, {"gap_bound", gap_bound}, {"p_softmax", p_softmax},
              {"p_bound", p_bound}, {"retrieval_correct", retrieval_correct}, {"status", to_string(status)}};
}

Prop2Report verify_prop2(const Prop2Input& in) {
  require(in.tau > 0.0, ErrorKind::PreconditionViolated, "tau must be positive");
  require(!in.negatives.empty(), ErrorKind::PreconditionViolated, "need at least one negative");
  auto unit = [](const Vector& v, const char* what) {
    if (std::abs(v.norm() - 1.0) > 1e-9) fail(ErrorKind::PreconditionViolated, std::string(what) + " is not unit-norm");
  };
  unit(in.e_Y, "e_Y");
  unit(in.e_M, "e_M");
  require(in.e_M.size() == in.e_Y.size(), ErrorKind::DimensionMismatch, "e_M and e_Y differ in width");
  for (const Vector& n : in.negatives) {
    require(n.size() == in.e_Y.size(), ErrorKind::DimensionMismatch, "negative width differs");
    unit(n, "negative");
    if (in.e_Y.dot(n) > 1.0 - in.Delta + kBoundTolerance)
      fail(ErrorKind::PreconditionViolated, "negative has cosine " + fmt(in.e_Y.dot(n)) + " to e_Y, above 1 - Delta = " +
                                                fmt(1.0 - in.Delta));
  }
  Prop2Report r;
  r.eta = std::max(0.0, 1.0 - in.e_Y.dot(in.e_M));
  r.Delta = in.Delta;
  r.threshold = r.eta + std::sqrt(2.0 * r.eta);
  r.gap_bound = r.Delta - r.threshold;

  const double pos = in.e_M.dot(in.e_Y);
  r.min_gap = INFINITY;
  r.retrieval_correct = true;
  double denom = 1.0;
  for (const Vector& n : in.negatives) {
    const double neg = in.e_M.dot(n);
    r.min_gap = std::min(r.min_gap, pos - neg);
    r.retrieval_correct = r.retrieval_correct && pos > neg;
    denom += std::exp((neg - pos) / in.tau);
  }
  r.p_softmax = 1.0 / denom;
  const double N = static_cast<double>(in.negatives.size());
  r.p_bound = 1.0 / (1.0 + N * std::exp(-r.gap_bound / in.tau));

  if (!(r.Delta > r.threshold)) {
    r.status = Prop2Status::OutsideMarginRegime;
    return r;
  }
  const bool ok = r.retrieval_correct && r.min_gap >= r.gap_bound - kBoundTolerance &&
                  r.p_softmax >= r.p_bound - kBoundTolerance;
  r.status = ok ? Prop2Status::Pass : Prop2Status::Fail;
  return r;
}

namespace {

/// Unit vector orthogonal to u (unit), random.
Vector random_orthogonal(const Vector& u, Rng& rng) {
  for (;;) {
    Vector w = gaussian_vector(u.size(), rng);
    w -= w.dot(u) * u;
    const double n = w.norm();
    if (n > 1e-6) return w / n;
  }
}

}  // namespace

LatentTrajectory random_sphere_walk(int T, int d, double V, Rng& rng) {
  require(T >= 1 && d >= 2, ErrorKind::InvalidSpec, "walk needs T >= 1 and d >= 2");
  const double radius = std::sqrt(static_cast<double>(d));
  const double chord = T > 1 ? V / (T - 1) : 0.0;
  require(V >= 0.0 && chord <= 2.0 * radius, ErrorKind::InvalidSpec, "step longer than the sphere's diameter");
  const double angle = 2.0 * std::asin(chord / (2.0 * radius));
  LatentTrajectory z(T, d);
  Vector u = gaussian_vector(d, rng).normalized();
  z.row(0) = radius * u.transpose();
  for (int t = 1; t < T; ++t) {
    const Vector w = random_orthogonal(u, rng);
    u = std::cos(angle) * u + std::sin(angle) * w;
    u.normalize();
    z.row(t) = radius * u.transpose();
  }
  return z;
}

Prop2Input random_prop2_instance(Rng& rng, int dim, int max_negatives) {
  Prop2Input in;
  in.e_Y = gaussian_vector(dim, rng).normalized();
  const double eta = uniform(rng, 0.0, 0.05);
  const Vector w = random_orthogonal(in.e_Y, rng);
  const double c = 1.0 - eta;
  in.e_M = (c * in.e_Y + std::sqrt(std::max(0.0, 1.0 - c * c)) * w).normalized();
  const double eta_real = 1.0 - in.e_Y.dot(in.e_M);
  in.Delta = std::min(1.9, eta_real + std::sqrt(2.0 * std::max(0.0, eta_real)) + uniform(rng, 0.01, 0.6));
  in.tau = uniform(rng, 0.03, 1.0);
  const int n = uniform_int(rng, 1, max_negatives);
  for (int k = 0; k < n; ++k) {
    const double cos_y = std::max(-1.0, 1.0 - in.Delta - uniform(rng, 0.0, 0.3));
    const Vector v = random_orthogonal(in.e_Y, rng);
    in.negatives.push_back((cos_y * in.e_Y + std::sqrt(std::max(0.0, 1.0 - cos_y * cos_y)) * v).normalized());
  }
  return in;
}

std::vector<Prop1Cell> SweepGrid::cells() const {
  std::vector<Prop1Cell> out;
  for (double ls : L_s)
    for (double lz : L_z)
      for (double v : V)
        for (int mm : m)
          for (std::uint64_t s : seeds) out.push_back({ls, lz, v, mm, s});
  return out;
}

SweepGrid sweep_grid_from_json(const Json& j) {
  SweepGrid g;
  StrictObject o(j, "grid");
  o.get("L_s", g.L_s);
  o.get("L_z", g.L_z);
  o.get("V", g.V);
  o.get("m", g.m);
  o.get("seeds", g.seeds);
  o.get("T", g.T);
  o.get("d_z", g.d_z);
  o.finish();
  require(!g.cells().empty(), ErrorKind::ConfigInvalid, "grid has no cells");
  return g;
}

Json sweep_grid_to_json(const SweepGrid& g) {
  return Json{{"L_s", g.L_s}, {"L_z", g.L_z}, {"V", g.V}, {"m", g.m}, {"seeds", g.seeds}, {"T", g.T}, {"d_z", g.d_z}};
}

std::vector<Prop1SweepRow> sweep_prop1(const SweepGrid& grid, Exec exec) {
  const auto cells = grid.cells();
  require(!cells.empty(), ErrorKind::InvalidSpec, "grid has no cells");
  std::vector<Prop1SweepRow> rows(cells.size());
  parallel_for(static_cast<std::ptrdiff_t>(cells.size()), exec, [&](std::ptrdiff_t i) {
    const Prop1Cell& c = cells[static_cast<std::size_t>(i)];
    WorldSpec ws;
    ws.d_z = grid.d_z;
    ws.target_ls = c.L_s;
    ws.target_lz = c.L_z;
    ws.seed = mix_seed(c.seed, 1);
    const SyntheticWorld world = SyntheticWorld::random(ws);
    Rng rng(mix_seed(c.seed, 2));
    const LatentTrajectory z = random_sphere_walk(grid.T, grid.d_z, c.V, rng);
    const Vector s1 = gaussian_vector(world.state_dim(), rng);
    const Prop1Report rep = verify_prop1(world, z, c.m, s1, true);
    Prop1SweepRow& row = rows[static_cast<std::size_t>(i)];
    row.cell = c;
    row.max_err = *std::max_element(rep.max_rollout_err_per_t.begin(), rep.max_rollout_err_per_t.end());
    row.uniform_bound = rep.uniform_bound;
    row.tightness = rep.uniform_bound > 0.0 ? row.max_err / rep.uniform_bound : 0.0;
    row.pass = rep.all_pass;
  });
  return rows;
}

std::string sweep_csv(const std::vector<Prop1SweepRow>& rows) {
  std::string out = "L_s,L_z,V,m,seed,max_err,uniform_bound,tightness,pass\n";
  for (const auto& r : rows)
    out += fmt(r.cell.L_s) + "," + fmt(r.cell.L_z) + "," + fmt(r.cell.V) + "," + std::to_string(r.cell.m) + "," +
           std::to_string(r.cell.seed) + "," + fmt(r.max_err) + "," + fmt(r.uniform_bound) + "," + fmt(r.tightness) +
           "," + (r.pass ? "1" : "0") + "\n";
  return out;
}

Json SuiteResult::to_json() const {
  return Json{{"instances", instances}, {"passed", passed},           {"outside_regime", outside},
              {"worst_slack", worst_slack}, {"first_failure", first_failure}, {"ok", ok()}};
}

namespace {

struct Outcome {
  bool pass = false;
  bool outside = false;
  double slack = 0.0;
  std::string note;
};

SuiteResult collect(const std::vector<Outcome>& outcomes, const char* name) {
  SuiteResult r;
  r.instances = static_cast<int>(outcomes.size());
  r.worst_slack = INFINITY;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const Outcome& o = outcomes[i];
    if (o.outside) {
      ++r.outside;
      continue;
    }
    r.worst_slack = std::min(r.worst_slack, o.slack);
    if (o.pass) {
      ++r.passed;
    } else if (r.first_failure.empty()) {
      r.first_failure = std::string(name) + " instance " + std::to_string(i) + ": " + o.note;
    }
  }
  if (!std::isfinite(r.worst_slack)) r.worst_slack = 0.0;
  return r;
}

}  // namespace

SuiteResult run_prop1_suite(int instances, std::uint64_t seed, Exec exec) {
  static constexpr int kM[] = {2, 4, 8, 16};
  std::vector<Outcome> out(static_cast<std::size_t>(instances));
  parallel_for(instances, exec, [&](std::ptrdiff_t i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    WorldSpec ws;
    ws.target_ls = uniform(rng, 0.3, 0.95);
    if (uniform(rng) < 0.5) ws.target_lz = uniform(rng, 0.2, 2.0);
    ws.seed = rng();
    const SyntheticWorld world = SyntheticWorld::random(ws);
    const int T = uniform_int(rng, 8, 96);
    const double V = uniform(rng) < 0.05 ? 0.0 : uniform(rng, 0.0, std::min(20.0, 0.9 * (T - 1) * 2.0 * std::sqrt(8.0)));
    const LatentTrajectory z = random_sphere_walk(T, ws.d_z, V, rng);
    const int m = kM[uniform_int(rng, 0, 3)];
    const Vector s1 = gaussian_vector(world.state_dim(), rng);
    const Prop1Report rep = verify_prop1(world, z, m, s1, true);
    Outcome& o = out[static_cast<std::size_t>(i)];
    o.pass = rep.all_pass;
    o.slack = rep.bound_latent - rep.max_latent_dev;
    for (std::size_t t = 0; t < rep.bound_per_t.size(); ++t)
      o.slack = std::min(o.slack, rep.bound_per_t[t] - rep.max_rollout_err_per_t[t]);
    o.note = "V=" + fmt(rep.V) + " m=" + std::to_string(m);
  });
  return collect(out, "prop1");
}

SuiteResult run_prop2_suite(int instances, std::uint64_t seed, Exec exec) {
  std::vector<Outcome> out(static_cast<std::size_t>(instances));
  parallel_for(instances, exec, [&](std::ptrdiff_t i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const Prop2Input in = random_prop2_instance(rng, uniform_int(rng, 3, 16));
    const Prop2Report rep = verify_prop2(in);
    Outcome& o = out[static_cast<std::size_t>(i)];
    o.pass = rep.status == Prop2Status::Pass;
    o.outside = rep.status == Prop2Status::OutsideMarginRegime;
    o.slack = std::min(rep.min_gap - rep.gap_bound, rep.p_softmax - rep.p_bound);
    o.note = "eta=" + fmt(rep.eta) + " Delta=" + fmt(rep.Delta);
  });
  return collect(out, "prop2");
}

SuiteResult run_tv_suite(int instances, std::uint64_t seed, Exec exec) {
  std::vector<Outcome> out(static_cast<std::size_t>(instances));
  parallel_for(instances, exec, [&](std::ptrdiff_t i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    DatasetSpec spec;
    spec.world.target_ls = uniform(rng, 0.3, 0.95);
    spec.world.seed = rng();
    spec.extraction.lookahead = uniform_int(rng, 1, 8);
    if (uniform(rng) < 0.5) spec.world.backward = BackwardMapKind::Random;
    const SyntheticWorld world = SyntheticWorld::random(spec.world);
    const Matrix dirs = behavior_directions(spec);
    std::vector<int> behaviors;
    const int K = uniform_int(rng, 1, 3);
    for (int k = 0; k < K; ++k) behaviors.push_back(uniform_int(rng, 0, spec.n_behaviors - 1));
    const LatentTrajectory script = behavior_script(spec, dirs, behaviors, rng);
    const Vector s1 = world.steady_state(script.row(0).transpose()) + gaussian_vector(world.state_dim(), rng, 0.1);
    const StateTrajectory states = rollout(world, s1, script);
    const TvReport rep = verify_tv_smoothing(world, spec.extraction, states);
    Outcome& o = out[static_cast<std::size_t>(i)];
    o.pass = rep.all_pass;
    o.slack = std::min(rep.tv_bound - rep.tv_full, -rep.max_step_excess);
    o.note = "telescoping err " + fmt(rep.max_telescoping_err) + ", TV " + fmt(rep.tv_full) + " vs bound " +
             fmt(rep.tv_bound);
  });
  return collect(out, "tv");
}

}  // namespace behave
