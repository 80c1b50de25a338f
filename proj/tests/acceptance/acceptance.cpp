// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "behave/alignment.hpp"
#include "behave/bottleneck.hpp"
#include "behave/config.hpp"
#include "behave/flow.hpp"
#include "behave/json_io.hpp"
#include "behave/pipeline.hpp"
#include "behave/synthetic_world.hpp"
#include "behave/theory.hpp"
#include "fd.hpp"
#include "toy.hpp"

using namespace behave;
using namespace behave::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::string& tolerance, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << tolerance << "] " << o.detail << std::endl;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Matrix unit_rows(Index rows, Index cols, Rng& rng) {
  Matrix m = gaussian_matrix(rows, cols, rng);
  for (Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).norm();
  return m;
}

Matrix loop_similarity(const std::vector<Matrix>& P, const std::vector<Matrix>& Y, double tok, double frm) {
  Matrix R(static_cast<Index>(P.size()), static_cast<Index>(Y.size()));
  for (std::size_t i = 0; i < P.size(); ++i)
    for (std::size_t j = 0; j < Y.size(); ++j) {
      std::vector<double> F;
      for (Index t = 0; t < P[i].rows(); ++t) {
        double acc = 0.0;
        for (Index k = 0; k < Y[j].rows(); ++k) {
          double dot = 0.0;
          for (Index c = 0; c < P[i].cols(); ++c) dot += P[i](t, c) * Y[j](k, c);
          acc += std::exp(dot / tok);
        }
        F.push_back(tok * std::log(acc / static_cast<double>(Y[j].rows())));
      }
      double z = 0.0, r = 0.0;
      for (double f : F) z += std::exp(f / frm);
      for (double f : F) r += std::exp(f / frm) / z * f;
      R(static_cast<Index>(i), static_cast<Index>(j)) = r;
    }
  return R;
}

double loop_contrastive(const Matrix& R, double gamma) {
  const Index B = R.rows();
  double rows = 0.0, cols = 0.0;
  for (Index i = 0; i < B; ++i) {
    double s = 0.0;
    for (Index j = 0; j < B; ++j) s += std::exp(gamma * R(i, j));
    rows -= std::log(std::exp(gamma * R(i, i)) / s);
  }
  for (Index j = 0; j < B; ++j) {
    double s = 0.0;
    for (Index i = 0; i < B; ++i) s += std::exp(gamma * R(i, j));
    cols -= std::log(std::exp(gamma * R(j, j)) / s);
  }
  return 0.5 * (rows + cols) / static_cast<double>(B);
}

struct McEstimate {
  double mean = 0.0, se = 0.0;
};

McEstimate mc(int n, const std::function<double()>& draw) {
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = draw();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(sq / n - mean * mean, 0.0) / n)};
}

Outcome theorem_suites() {
  const auto t0 = Clock::now();
  const SuiteResult p1 = run_prop1_suite(500, 1, Exec::Serial);
  const SuiteResult p2 = run_prop2_suite(500, 2, Exec::Serial);
  const SuiteResult tv = run_tv_suite(200, 3, Exec::Serial);
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "prop1 " << p1.passed << "/" << p1.instances << ", prop2 " << p2.passed + p2.outside << "/" << p2.instances
    << ", tv " << tv.passed << "/" << tv.instances << ", " << fmt(secs) << " s";
  for (const SuiteResult* s : {&p1, &p2, &tv})
    if (!s->first_failure.empty()) d << "; " << s->first_failure;
  return {p1.ok() && p2.ok() && tv.ok() && secs < 120.0, d.str()};
}

Outcome gradients() {
  double worst = 0.0;
  std::string where;
  bool sizes = true;
  {
    const SyntheticWorld world = SyntheticWorld::random(toy_world_spec());
    BottleneckModel model(toy_bottleneck_config(), 3);
    jitter(model.params(), 1);
    const ToyBatch batch = toy_batch(world, model, {4, 3, 4}, 11);
    LossConfig cfg;
    cfg.beta = 0.3;
    cfg.lambda_pi = 0.2;
    cfg.lambda_sem = 0.5;
    cfg.lambda_tok = 0.5;
    cfg.lambda_frm = 0.7;
    nn::Gradients g;
    vbb_loss(model, world, batch.items(), batch.noise, cfg, &g, Exec::Serial);
    const FdResult r = check_gradients(model.params(), g, [&] {
      return vbb_loss(model, world, batch.items(), batch.noise, cfg, nullptr, Exec::Serial).total;
    });
    sizes = sizes && model.params().trainable_size() <= 500 && r.checked == model.params().trainable_size();
    if (r.max_rel > worst) worst = r.max_rel, where = "bottleneck/" + r.worst_block;
  }
  for (int blocks : {1, 2}) {
    FlowConfig cfg = toy_flow_config();
    cfg.blocks = blocks;
    FlowModel model(cfg, 8 + static_cast<std::uint64_t>(blocks));
    jitter(model.params(), 9);
    Rng rng(10);
    std::vector<FlowItem> items;
    for (int i = 0; i < 6; ++i) {
      FlowItem it;
      it.eps = gaussian_matrix(cfg.frames, cfg.d_m, rng);
      it.m = gaussian_matrix(cfg.frames, cfg.d_m, rng);
      it.r = uniform(rng);
      it.ctx = gaussian_vector(cfg.d_ctx, rng);
      it.drop = i % 3 == 1;
      items.push_back(std::move(it));
    }
    nn::Gradients g;
    fm_loss_batch(model, items, &g);
    const FdResult r = check_gradients(model.params(), g, [&] { return fm_loss_batch(model, items); }, 1e-4);
    sizes = sizes && model.params().trainable_size() <= 500 && r.checked == model.params().trainable_size();
    if (r.max_rel > worst) worst = r.max_rel, where = "flow/" + r.worst_block;
  }
  return {sizes && worst < 1e-4, "max rel " + fmt(worst) + " at " + where};
}

Outcome loss_oracles() {
  Rng rng(4);
  double sim_err = 0.0, con_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index B = uniform_int(rng, 2, 8), d = uniform_int(rng, 2, 6);
    std::vector<Matrix> P, Y;
    for (Index i = 0; i < B; ++i) {
      P.push_back(unit_rows(uniform_int(rng, 1, 4), d, rng));
      Y.push_back(unit_rows(uniform_int(rng, 1, 5), d, rng));
    }
    const double tok = uniform(rng, 0.05, 2.0), frm = uniform(rng, 0.05, 2.0), gamma = uniform(rng, 0.5, 20.0);
    const Matrix R = similarity_matrix(P, Y, {tok, frm});
    sim_err = std::max(sim_err, (R - loop_similarity(P, Y, tok, frm)).cwiseAbs().maxCoeff());
    con_err = std::max(con_err, std::abs(contrastive_loss(R, gamma) - loop_contrastive(R, gamma)));
  }

  Posterior p;
  p.mu = gaussian_matrix(3, 4, rng, 0.7);
  p.log_var = gaussian_matrix(3, 4, rng, 0.5);
  std::normal_distribution<double> normal;
  const McEstimate kl = mc(200000, [&] {
    double v = 0.0;
    for (Index i = 0; i < p.mu.size(); ++i) {
      const double e = normal(rng);
      const double s = std::exp(0.5 * p.log_var.data()[i]);
      const double m = p.mu.data()[i] + s * e;
      v += (-0.5 * e * e - std::log(s)) + 0.5 * m * m;
    }
    return v / static_cast<double>(p.mu.size());
  });
  const double kl_z = std::abs(kl_prior_loss(p) - kl.mean) / kl.se;

  WorldSpec spec;
  spec.state_dim = 4;
  spec.action_dim = 3;
  spec.d_z = 3;
  spec.sigma_pi = 0.5;
  spec.seed = 40;
  const SyntheticWorld w = SyntheticWorld::random(spec);
  const Matrix z = project_rows(gaussian_matrix(1, 3, rng));
  const Matrix zh = project_rows(gaussian_matrix(1, 3, rng));
  const StateTrajectory states = gaussian_matrix(2, 4, rng);
  const Vector s = states.row(0).transpose();
  const Vector mu_hat = w.policy_mean(s, zh.row(0).transpose());
  const Vector mu = w.policy_mean(s, z.row(0).transpose());
  const double var = spec.sigma_pi * spec.sigma_pi;
  const McEstimate akl = mc(200000, [&] {
    const Vector a = mu_hat + gaussian_vector(3, rng, spec.sigma_pi);
    return ((a - mu).squaredNorm() - (a - mu_hat).squaredNorm()) / (2.0 * var);
  });
  const double akl_z = std::abs(action_kl(w, states, z, zh) - akl.mean) / akl.se;

  const bool ok = sim_err <= 1e-12 && con_err <= 1e-12 && kl_z < 3.0 && akl_z < 3.0;
  return {ok, "similarity " + fmt(sim_err) + ", contrastive " + fmt(con_err) + ", kl_prior " + fmt(kl_z) +
                  " SE, action_kl " + fmt(akl_z) + " SE"};
}

Outcome sampler() {
  Rng rng(1);
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix eps = gaussian_matrix(3, 4, rng, 1e3);
    const Matrix m = gaussian_matrix(3, 4, rng, 1e-3);
    exact = exact && interpolate(eps, m, 0.0) == eps && interpolate(eps, m, 1.0) == m;
  }
  FlowConfig cfg = toy_flow_config();
  cfg.hidden = 16;
  FlowModel model(cfg, 22);
  jitter(model.params(), 23, 0.2);
  double lo = 1e300, hi = 0.0;
  bool first_order = true;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix eps = gaussian_matrix(2, 2, rng);
    const Vector ctx = gaussian_vector(3, rng);
    const Matrix ref = sample(model, ctx, {256, 1.5}, eps);
    std::vector<double> scaled;
    for (int s : {4, 8, 16, 32}) scaled.push_back((sample(model, ctx, {s, 1.5}, eps) - ref).norm() * s);
    std::vector<double> sorted = scaled;
    std::sort(sorted.begin(), sorted.end());
    const double c = 0.5 * (sorted[1] + sorted[2]);
    for (double v : scaled) {
      lo = std::min(lo, v / c);
      hi = std::max(hi, v / c);
      first_order = first_order && c > 0.0 && v >= 0.5 * c && v <= 2.0 * c;
    }
  }
  return {exact && first_order, std::string("endpoints ") + (exact ? "exact" : "inexact") + ", err*steps/C in [" +
                                    fmt(lo) + ", " + fmt(hi) + "]"};
}

struct RunOutput {
  int status = -1;
  double seconds = 0.0;
};

RunOutput behave_run(const std::string& behave, const fs::path& config, const fs::path& out) {
  fs::remove_all(out);
  const std::string cmd = "\"" + behave + "\" run -c \"" + config.string() + "\" --out-dir \"" + out.string() +
                          "\" --threads 1 > \"" + (out.string() + ".log") + "\" 2>&1";
  const auto t0 = Clock::now();
  RunOutput r;
  r.status = std::system(cmd.c_str());
  r.seconds = seconds_since(t0);
  return r;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  if (!fs::exists(a) || !fs::exists(b)) return false;
  return read_text_file(a) == read_text_file(b);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string behave, config, work;
  app.add_option("--behave", behave, "path to the behave binary")->required();
  app.add_option("--config", config, "run config for the end-to-end checks")->required();
  app.add_option("--work", work, "scratch directory")->required();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  report("theorem-suites", "100% of 500/500/200 instances, < 120 s single-core", theorem_suites);
  report("gradient-fd", "max rel err < 1e-4, every block, <= 500 params", gradients);
  report("loss-oracles", "|diff| <= 1e-12; MC within 3 SE", loss_oracles);
  report("sampler", "endpoints bit-exact; err*steps within [0.5, 2] x C", sampler);

  const RunConfig cfg = load_run_config(config);
  const fs::path out = fs::path(work) / "run", kept = fs::path(work) / "first";
  const RunOutput first = behave_run(behave, config, out);
  Json eval;
  if (first.status == 0 && fs::exists(out / "eval.json")) eval = read_json_file(out / "eval.json");

  report("end-to-end", "< 600 s; recon < 0.25 x untrained; top-1 >= 0.8 at B=32; prototype >= 0.9", [&]() -> Outcome {
    if (eval.is_null()) return {false, "behave run exited with " + std::to_string(first.status)};
    const Dataset test = make_test_set(cfg, Exec::Serial);
    const double base = reconstruction_metrics(fresh_bottleneck(cfg), make_world(cfg), test, Exec::Serial).recon_mse;
    const double recon = eval.at("report").at("recon_mse").get<double>();
    const double top1 = eval.at("report").at("retrieval").at("top1").get<double>();
    const double proto = eval.at("prototype").at("accuracy").get<double>();
    const int batch = eval.at("retrieval").at("batch_size").get<int>();
    const bool ok = first.seconds < 600.0 && recon < 0.25 * base && top1 >= 0.8 && proto >= 0.9 && batch == 32;
    return {ok, fmt(first.seconds) + " s; recon " + fmt(recon) + " vs untrained " + fmt(base) + "; top-1 " +
                    fmt(top1) + "; prototype " + fmt(proto)};
  });

  report("compression-sweep", "action KL at c=16 > c=8", [&]() -> Outcome {
    const auto rows = sweep_compression(cfg, make_dataset(cfg, Exec::Serial), make_test_set(cfg, Exec::Serial), {3, 4},
                                        Exec::Serial);
    double kl8 = NAN, kl16 = NAN;
    for (const auto& r : rows) {
      if (r.compression == 8) kl8 = r.action_kl;
      if (r.compression == 16) kl16 = r.action_kl;
    }
    return {kl16 > kl8, "c=8 " + fmt(kl8) + ", c=16 " + fmt(kl16)};
  });

  report("composition", ">= 100 paired trials; order up, transition down; sign test p < 0.05", [&]() -> Outcome {
    if (eval.is_null()) return {false, "no eval.json"};
    const Json& c = eval.at("composition");
    const int trials = c.at("trials").get<int>();
    const double oc = c.at("order_accuracy").at("compose").get<double>();
    const double os = c.at("order_accuracy").at("single_shot").get<double>();
    const double tc = c.at("transition").at("compose").get<double>();
    const double ts = c.at("transition").at("single_shot").get<double>();
    const double po = c.at("order_sign_test").at("p").get<double>();
    const double pt = c.at("transition_sign_test").at("p").get<double>();
    const bool ok = trials >= 100 && oc > os && tc < ts && po < 0.05 && pt < 0.05;
    return {ok, std::to_string(trials) + " trials; order " + fmt(os) + " -> " + fmt(oc) + " (p " + fmt(po) +
                    "); transition " + fmt(ts) + " -> " + fmt(tc) + " (p " + fmt(pt) + ")"};
  });

  report("determinism", "byte-identical dataset, parameter blobs, eval JSON", [&]() -> Outcome {
    // Identical invocation: the first run is moved aside and the command repeated verbatim.
    fs::remove_all(kept);
    fs::rename(out, kept);
    const RunOutput second = behave_run(behave, config, out);
    if (second.status != 0) return {false, "second run exited with " + std::to_string(second.status)};
    std::string differ;
    for (const char* f : {"dataset.json", "vbb.json.bin", "flow.json.bin", "eval.json"})
      if (!same_bytes(out / f, kept / f)) differ += std::string(" ") + f;
    return {differ.empty(), differ.empty() ? "all identical" : "differs:" + differ};
  });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
