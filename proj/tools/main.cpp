// behave: dataset generation, training, generation, composition, evaluation
// and bound verification from one JSON config.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "behave/checkpoint.hpp"
#include "behave/config.hpp"
#include "behave/errors.hpp"
#include "behave/parallel.hpp"
#include "behave/pipeline.hpp"
#include "behave/theory.hpp"

namespace fs = std::filesystem;
using namespace behave;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kBound = 4 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::ConfigInvalid:
    case ErrorKind::MissingArtifact:
    case ErrorKind::FormatError:
    case ErrorKind::InvalidSpec:
    case ErrorKind::UnknownToken:
    case ErrorKind::EmptyClause:
    case ErrorKind::OverlapTooLarge:
    case ErrorKind::LengthNotCompressible:
      return kConfig;
    default:
      return kNumeric;
  }
}

struct Common {
  std::string config_path = "configs/tiny.json";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out_dir;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "Run config (JSON)")->capture_default_str();
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--threads", c.threads, "Cap on worker threads (0 = OpenMP default)");
  app->add_option("--out-dir", c.out_dir, "Override the config's out_dir");
}

RunConfig load(const Common& c) {
  RunConfig cfg = load_run_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  set_thread_count(c.threads);
  return cfg;
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, dump_json(j, 2) + "\n");
}

/// Wall-clock facts live next to an artifact, never inside it.
void write_sidecar(const fs::path& artifact, double seconds) {
  fs::path p = artifact;
  p += ".meta.json";
  write_text_file(p, dump_json(Json{{"finished_unix", static_cast<long long>(std::time(nullptr))},
                                    {"elapsed_seconds", seconds}},
                               2) +
                         "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Dataset need_dataset(const RunPaths& p) {
  if (!fs::exists(p.dataset))
    fail(ErrorKind::MissingArtifact, p.dataset.string() + " not found; run `behave gen-data` first");
  return read_dataset_json(p.dataset);
}

int cmd_gen_data(const RunConfig& cfg) {
  const RunPaths p(cfg.out_dir);
  fs::create_directories(p.dir);
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = make_dataset(cfg);
  write_dataset_json(data, p.dataset);
  write_json(p.dir / "config.json", run_config_to_json(cfg));
  write_sidecar(p.dataset, seconds_since(t0));
  std::printf("wrote %zu samples to %s\n", data.samples.size(), p.dataset.string().c_str());
  return kOk;
}

int cmd_train_vbb(const RunConfig& cfg) {
  const RunPaths p(cfg.out_dir);
  const Dataset data = need_dataset(p);
  const auto t0 = std::chrono::steady_clock::now();
  BottleneckModel model = fresh_bottleneck(cfg);
  const int every = std::max(1, cfg.vbb_optim.steps / 10);
  const VbbTrainResult res = train_bottleneck_stage(cfg, data, model, Exec::Parallel, [&](const VbbRecord& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.vbb_optim.steps)
      std::printf("vbb step %5d  total %.5f  rec %.5f  kl %.4f  sem %.4f\n", r.step, r.total, r.rec, r.kl, r.sem);
  });
  save_bottleneck(p.vbb, cfg, model, res.rng_state);
  write_text_file(p.vbb_history, history_jsonl(res.history));
  write_sidecar(p.vbb, seconds_since(t0));
  std::printf("saved %s (%.1f s)\n", p.vbb.string().c_str(), seconds_since(t0));
  return kOk;
}

int cmd_train_flow(const RunConfig& cfg) {
  const RunPaths p(cfg.out_dir);
  const Dataset data = need_dataset(p);
  const BottleneckModel vbb = load_bottleneck(p.vbb, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  FlowModel flow = fresh_flow(cfg);
  const int every = std::max(1, cfg.flow_optim.steps / 10);
  const FlowTrainResult res = train_flow_stage(cfg, vbb, data, flow, Exec::Parallel, [&](const FlowRecord& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.flow_optim.steps)
      std::printf("flow step %5d  loss %.5f\n", r.step, r.loss);
  });
  save_flow(p.flow, cfg, flow, res.rng_state);
  write_text_file(p.flow_history, history_jsonl(res.history));
  write_sidecar(p.flow, seconds_since(t0));
  std::printf("saved %s (%.1f s)\n", p.flow.string().c_str(), seconds_since(t0));
  return kOk;
}

struct GenOptions {
  std::string prompt = "walk";
  std::optional<int> steps;
  std::optional<double> guidance;
  std::optional<int> overlap;
  std::optional<int> stage_len;
  bool in_place = false;
  std::string out;
};

int cmd_generate(const RunConfig& base, const GenOptions& o, bool composed) {
  RunConfig cfg = base;
  if (o.steps) cfg.sampler.steps = *o.steps;
  if (o.guidance) cfg.sampler.guidance_scale = *o.guidance;
  if (o.overlap) cfg.composition.overlap = *o.overlap;
  if (o.stage_len) cfg.composition.stage_len = *o.stage_len;
  if (o.in_place) cfg.composition.mode = BlendMode::InPlace;
  cfg.composition.sampler = cfg.sampler;
  validate(cfg);
  const RunPaths p(cfg.out_dir);
  const BottleneckModel vbb = load_bottleneck(p.vbb, cfg);
  const FlowModel flow = load_flow(p.flow, cfg);
  const SyntheticWorld world = make_world(cfg);
  const Generator g{vbb, flow, world};
  const Vocabulary vocab(cfg.dataset.n_behaviors);
  const std::vector<int> tokens = vocab.tokenize(o.prompt);
  const Vector s1 = Vector::Zero(world.state_dim());
  Generation gen;
  if (composed) {
    gen = generate_composed(g, split_prompt(tokens, vocab.separator()), cfg.composition, s1, cfg.seed);
  } else {
    split_prompt(tokens, vocab.separator());
    gen = generate_single(g, tokens, cfg.sampler, s1, cfg.seed);
  }
  Json out{{"prompt", o.prompt},
           {"tokens", tokens},
           {"states", matrix_to_json(gen.states)},
           {"latents", matrix_to_json(gen.latents)},
           {"boundaries", gen.boundaries},
           {"state_boundaries", gen.state_boundaries},
           {"per_stage_lengths", gen.stage_lengths},
           {"config", run_config_to_json(cfg)}};
  const fs::path path = o.out.empty() ? p.dir / (composed ? "compose.json" : "generate.json") : fs::path(o.out);
  write_json(path, out);
  std::printf("%s: %lld latent frames, %zu stage(s) -> %s\n", o.prompt.c_str(),
              static_cast<long long>(gen.latents.rows()), gen.stage_lengths.size(), path.string().c_str());
  return kOk;
}

std::string series_csv(const fs::path& jsonl, const std::vector<std::string>& keys) {
  std::istringstream in(read_text_file(jsonl));
  std::string out = "step";
  for (const auto& k : keys) out += "," + k;
  out += "\n";
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    out += std::to_string(j.at("step").get<int>());
    for (const auto& k : keys) {
      char buf[40];
      std::snprintf(buf, sizeof buf, ",%.17g", j.at(k).get<double>());
      out += buf;
    }
    out += "\n";
  }
  return out;
}

int cmd_eval(const RunConfig& cfg, bool plots) {
  const RunPaths p(cfg.out_dir);
  const Dataset train = need_dataset(p);
  const BottleneckModel vbb = load_bottleneck(p.vbb, cfg);
  const FlowModel flow = load_flow(p.flow, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset test = make_test_set(cfg);
  const EvalResult res = evaluate(cfg, train, test, make_world(cfg), vbb, flow);
  Json doc = res.details;
  doc["config"] = run_config_to_json(cfg);
  write_json(p.eval_json, doc);
  write_text_file(p.eval_csv, res.report.csv_header() + "\n" + res.report.csv_row() + "\n");
  write_sidecar(p.eval_json, seconds_since(t0));
  if (plots) {
    fs::create_directories(p.plots);
    if (fs::exists(p.vbb_history))
      write_text_file(p.plots / "vbb_loss.csv", series_csv(p.vbb_history, {"total", "rec", "kl", "sem"}));
    if (fs::exists(p.flow_history)) write_text_file(p.plots / "flow_loss.csv", series_csv(p.flow_history, {"loss"}));
    SweepGrid grid;
    grid.seeds = {cfg.seed};
    write_text_file(p.plots / "prop1_tightness.csv", sweep_csv(sweep_prop1(grid)));
  }
  std::cout << dump_json(res.details, 2) << "\n";
  return kOk;
}

struct VerifyOptions {
  std::string prop = "all";
  int instances = 0;
  std::uint64_t seed = 1;
  std::string grid;
  std::string out;
};

int cmd_verify_bounds(const VerifyOptions& o, int threads) {
  set_thread_count(threads);
  const bool all = o.prop == "all";
  Json report = Json::object();
  bool ok = true;
  auto run = [&](const char* name, int default_n, SuiteResult (*fn)(int, std::uint64_t, Exec)) {
    const SuiteResult r = fn(o.instances > 0 ? o.instances : default_n, o.seed, Exec::Parallel);
    report[name] = r.to_json();
    ok = ok && r.ok();
    std::printf("%-5s %d/%d passed", name, r.passed, r.instances);
    if (r.outside > 0) std::printf(" (%d outside the margin regime)", r.outside);
    std::printf("%s%s\n", r.first_failure.empty() ? "" : "  first failure: ", r.first_failure.c_str());
  };
  if (all || o.prop == "1") run("prop1", 500, run_prop1_suite);
  if (all || o.prop == "2") run("prop2", 500, run_prop2_suite);
  if (all || o.prop == "tv") run("tv", 200, run_tv_suite);
  if (!o.grid.empty()) {
    const SweepGrid grid = sweep_grid_from_json(read_json_file(o.grid));
    const auto rows = sweep_prop1(grid);
    int passed = 0;
    for (const auto& r : rows) passed += r.pass ? 1 : 0;
    report["sweep"] = Json{{"grid", sweep_grid_to_json(grid)}, {"cells", rows.size()}, {"passed", passed}};
    ok = ok && passed == static_cast<int>(rows.size());
    std::fputs(sweep_csv(rows).c_str(), stdout);
  }
  report["seed"] = o.seed;
  report["all_pass"] = ok;
  if (!o.out.empty()) write_json(o.out, report);
  return ok ? kOk : kBound;
}

int cmd_sweep_compression(const RunConfig& cfg, const std::vector<int>& factors, const std::string& out) {
  const RunPaths p(cfg.out_dir);
  const Dataset train = need_dataset(p);
  std::vector<int> levels;
  for (int c : factors) {
    int lv = 0;
    while ((1 << lv) < c) ++lv;
    if ((1 << lv) != c) fail(ErrorKind::ConfigInvalid, "compression factors must be powers of two");
    levels.push_back(lv);
  }
  const auto rows = sweep_compression(cfg, train, make_test_set(cfg), levels);
  const std::string csv = compression_csv(rows);
  const fs::path path = out.empty() ? p.dir / "compression_sweep.csv" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, csv);
  Json j = Json::array();
  for (const auto& r : rows)
    j.push_back(Json{{"compression", r.compression}, {"recon_mse", r.recon_mse}, {"action_kl", r.action_kl}});
  fs::path jp = path;
  jp.replace_extension(".json");
  write_json(jp, Json{{"rows", j}, {"config", run_config_to_json(cfg)}});
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-conditioned compact behaviour programs on a synthetic latent-conditioned world"};
  app.require_subcommand(1);

  Common common;
  auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* train_vbb = app.add_subcommand("train-vbb", "Train the variational bottleneck");
  auto* train_flow = app.add_subcommand("train-flow", "Train the flow generator on the frozen bottleneck");
  auto* run = app.add_subcommand("run", "gen-data, train-vbb, train-flow and eval in sequence");
  GenOptions gen_opts;
  auto* generate = app.add_subcommand("generate", "Generate and roll out one prompt as a single program");
  auto* compose = app.add_subcommand("compose", "Generate a multi-clause prompt clause by clause and stitch it");
  bool plots = false;
  auto* eval = app.add_subcommand("eval", "Evaluate trained models; writes eval.json and eval.csv");
  VerifyOptions verify;
  int verify_threads = 0;
  auto* verify_bounds = app.add_subcommand("verify-bounds", "Check the approximation and alignment theorems");
  std::vector<int> factors{4, 8, 16};
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep-compression", "Retrain the bottleneck at several compression factors");

  for (auto* sc : {gen_data, train_vbb, train_flow, run, generate, compose, eval, sweep}) add_common(sc, common);
  for (auto* sc : {generate, compose}) {
    sc->add_option("--prompt", gen_opts.prompt, "Prompt text, clauses joined by 'then'")->required();
    sc->add_option("--steps", gen_opts.steps, "Euler steps");
    sc->add_option("--guidance", gen_opts.guidance, "Guidance scale");
    sc->add_option("--out", gen_opts.out, "Output JSON path");
  }
  compose->add_option("--overlap", gen_opts.overlap, "Blended frames per boundary");
  compose->add_option("--stage-len", gen_opts.stage_len, "Latent frames per clause");
  compose->add_flag("--in-place", gen_opts.in_place, "Blend in place instead of replacing overlap frames");
  eval->add_flag("--emit-plot-data", plots, "Write CSV series for plotting");
  run->add_flag("--emit-plot-data", plots, "Write CSV series for plotting");
  verify_bounds->add_option("--prop", verify.prop, "1, 2, tv or all")
      ->check(CLI::IsMember({"1", "2", "tv", "all"}))
      ->capture_default_str();
  verify_bounds->add_option("--instances", verify.instances, "Instances per suite (0 = 500/500/200)");
  verify_bounds->add_option("--seed", verify.seed, "Instance seed")->capture_default_str();
  verify_bounds->add_option("--grid", verify.grid, "Prop. 1 tightness grid (JSON)");
  verify_bounds->add_option("--out", verify.out, "Report JSON path");
  verify_bounds->add_option("--threads", verify_threads, "Cap on worker threads");
  sweep->add_option("--factors", factors, "Compression factors (powers of two)")->delimiter(',');
  sweep->add_option("--out", sweep_out, "CSV path (a JSON twin is written next to it)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (verify_bounds->parsed()) return cmd_verify_bounds(verify, verify_threads);
    const RunConfig cfg = load(common);
    if (gen_data->parsed()) return cmd_gen_data(cfg);
    if (train_vbb->parsed()) return cmd_train_vbb(cfg);
    if (train_flow->parsed()) return cmd_train_flow(cfg);
    if (generate->parsed()) return cmd_generate(cfg, gen_opts, false);
    if (compose->parsed()) return cmd_generate(cfg, gen_opts, true);
    if (eval->parsed()) return cmd_eval(cfg, plots);
    if (sweep->parsed()) return cmd_sweep_compression(cfg, factors, sweep_out);
    if (run->parsed()) {
      for (int (*step)(const RunConfig&) : {cmd_gen_data, cmd_train_vbb, cmd_train_flow})
        if (const int rc = step(cfg); rc != kOk) return rc;
      return cmd_eval(cfg, plots);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  }
  return kOk;
}
