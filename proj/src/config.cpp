#include "behave/config.hpp"

#include <cstdlib>

#include "behave/errors.hpp"

namespace behave {
namespace {

void read_optim(StrictObject& parent, const char* key, OptimConfig& o) {
  if (!parent.has(key)) return;
  StrictObject j(parent.child(key), parent.where() + "." + key);
  j.get("steps", o.steps);
  j.get("batch_size", o.batch_size);
  j.get("lr", o.lr);
  j.get("lr_scale", o.lr_scale);
  j.get("weight_decay", o.weight_decay);
  j.get("warmup", o.warmup);
  j.get("warmup_start", o.warmup_start);
  j.get("min_lr_ratio", o.min_lr_ratio);
  j.finish();
}

Json optim_json(const OptimConfig& o) {
  return Json{{"steps", o.steps},
              {"batch_size", o.batch_size},
              {"lr", o.lr},
              {"lr_scale", o.lr_scale},
              {"weight_decay", o.weight_decay},
              {"warmup", o.warmup},
              {"warmup_start", o.warmup_start},
              {"min_lr_ratio", o.min_lr_ratio}};
}

void check(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::ConfigInvalid, what);
}

void check_optim(const OptimConfig& o, const std::string& where) {
  check(o.steps >= 0, where + ".steps must be >= 0");
  check(o.batch_size >= 1, where + ".batch_size must be >= 1");
  check(o.lr > 0.0 && o.lr_scale > 0.0, where + ".lr and lr_scale must be positive");
  check(o.weight_decay >= 0.0, where + ".weight_decay must be >= 0");
  check(o.warmup >= 0, where + ".warmup must be >= 0");
  check(o.warmup_start > 0.0 && o.warmup_start <= 1.0, where + ".warmup_start must lie in (0, 1]");
  check(o.min_lr_ratio >= 0.0 && o.min_lr_ratio <= 1.0, where + ".min_lr_ratio must lie in [0, 1]");
}

}  // namespace

BottleneckConfig RunConfig::bottleneck_config() const {
  BottleneckConfig b = bottleneck;
  b.d_z = dataset.world.d_z;
  b.vocab_size = dataset.n_behaviors + 1;
  return b;
}

FlowConfig RunConfig::flow_config() const {
  FlowConfig f = flow;
  const BottleneckConfig b = bottleneck_config();
  const int c = b.compression();
  f.frames = (dataset.traj_len + c - 1) / c;
  f.d_m = b.d_m;
  f.d_ctx = b.d_e;
  return f;
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::ConfigInvalid, "config must be a JSON object");
  RunConfig c;
  StrictObject o(j, "config");
  int schema = kConfigSchema;
  o.get("schema_version", schema);
  if (schema != kConfigSchema)
    fail(ErrorKind::ConfigInvalid, "config.schema_version " + std::to_string(schema) + " is not supported (expected " +
                                       std::to_string(kConfigSchema) + ")");
  o.get("seed", c.seed);
  o.get("out_dir", c.out_dir);
  if (o.has("dataset")) {
    try {
      c.dataset = dataset_spec_from_json(o.child("dataset"));
    } catch (const Error& e) {
      fail(ErrorKind::ConfigInvalid, std::string("config.dataset: ") + e.what());
    }
  }
  if (o.has("bottleneck")) {
    StrictObject b(o.child("bottleneck"), "config.bottleneck");
    b.get("d_m", c.bottleneck.d_m);
    b.get("width", c.bottleneck.width);
    b.get("levels", c.bottleneck.levels);
    b.get("d_text", c.bottleneck.d_text);
    b.get("d_e", c.bottleneck.d_e);
    b.get("logit_scale_init", c.bottleneck.logit_scale_init);
    b.get("pad_inputs", c.bottleneck.pad_inputs);
    b.finish();
  }
  if (o.has("loss")) {
    StrictObject l(o.child("loss"), "config.loss");
    l.get("beta", c.loss.beta);
    l.get("lambda_pi", c.loss.lambda_pi);
    l.get("lambda_sem", c.loss.lambda_sem);
    l.get("lambda_tok", c.loss.lambda_tok);
    l.get("lambda_frm", c.loss.lambda_frm);
    l.finish();
  }
  read_optim(o, "vbb_optim", c.vbb_optim);
  if (o.has("flow")) {
    StrictObject f(o.child("flow"), "config.flow");
    f.get("hidden", c.flow.hidden);
    f.get("blocks", c.flow.blocks);
    f.get("time_freqs", c.flow.time_freqs);
    f.get("cond_dropout", c.flow.cond_dropout);
    f.get("stratified_time", c.flow.stratified_time);
    f.finish();
  }
  read_optim(o, "flow_optim", c.flow_optim);
  if (o.has("sampler")) {
    StrictObject s(o.child("sampler"), "config.sampler");
    s.get("steps", c.sampler.steps);
    s.get("guidance_scale", c.sampler.guidance_scale);
    std::string solver = "euler";
    s.get("solver", solver);
    check(solver == "euler", "config.sampler.solver must be \"euler\"");
    s.finish();
  }
  if (o.has("composition")) {
    StrictObject s(o.child("composition"), "config.composition");
    s.get("overlap", c.composition.overlap);
    s.get("stage_len", c.composition.stage_len);
    std::string mode = "replace";
    s.get("mode", mode);
    check(mode == "replace" || mode == "in_place", "config.composition.mode must be \"replace\" or \"in_place\"");
    c.composition.mode = mode == "replace" ? BlendMode::Replace : BlendMode::InPlace;
    s.finish();
  }
  if (o.has("eval")) {
    StrictObject e(o.child("eval"), "config.eval");
    e.get("test_samples", c.eval.test_samples);
    e.get("retrieval_batch", c.eval.retrieval_batch);
    e.get("draws_per_prompt", c.eval.draws_per_prompt);
    e.get("composition_trials", c.eval.composition_trials);
    e.get("composition_clauses", c.eval.composition_clauses);
    e.finish();
  }
  o.finish();
  c.composition.sampler = c.sampler;
  validate(c);
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  const auto& b = c.bottleneck;
  const auto& l = c.loss;
  return Json{
      {"schema_version", kConfigSchema},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"dataset", dataset_spec_to_json(c.dataset)},
      {"bottleneck",
       {{"d_m", b.d_m},
        {"width", b.width},
        {"levels", b.levels},
        {"d_text", b.d_text},
        {"d_e", b.d_e},
        {"logit_scale_init", b.logit_scale_init},
        {"pad_inputs", b.pad_inputs}}},
      {"loss",
       {{"beta", l.beta},
        {"lambda_pi", l.lambda_pi},
        {"lambda_sem", l.lambda_sem},
        {"lambda_tok", l.lambda_tok},
        {"lambda_frm", l.lambda_frm}}},
      {"vbb_optim", optim_json(c.vbb_optim)},
      {"flow",
       {{"hidden", c.flow.hidden},
        {"blocks", c.flow.blocks},
        {"time_freqs", c.flow.time_freqs},
        {"cond_dropout", c.flow.cond_dropout},
        {"stratified_time", c.flow.stratified_time}}},
      {"flow_optim", optim_json(c.flow_optim)},
      {"sampler", {{"steps", c.sampler.steps}, {"guidance_scale", c.sampler.guidance_scale}, {"solver", "euler"}}},
      {"composition",
       {{"overlap", c.composition.overlap},
        {"stage_len", c.composition.stage_len},
        {"mode", c.composition.mode == BlendMode::Replace ? "replace" : "in_place"}}},
      {"eval",
       {{"test_samples", c.eval.test_samples},
        {"retrieval_batch", c.eval.retrieval_batch},
        {"draws_per_prompt", c.eval.draws_per_prompt},
        {"composition_trials", c.eval.composition_trials},
        {"composition_clauses", c.eval.composition_clauses}}}};
}

void validate(const RunConfig& c) {
  const auto& d = c.dataset;
  check(d.n_behaviors >= 1, "dataset.n_behaviors must be >= 1");
  check(d.n_samples >= 2, "dataset.n_samples must be >= 2");
  check(d.traj_len >= 2, "dataset.traj_len must be >= 2");
  check(!d.clause_weights.empty(), "dataset.clause_weights must be non-empty");
  check(static_cast<int>(d.clause_weights.size()) <= d.n_behaviors,
        "dataset.clause_weights allows more clauses than behaviours");
  check(d.min_duration >= 1 && d.min_duration * static_cast<int>(d.clause_weights.size()) <= d.traj_len,
        "dataset.min_duration times the clause count must fit in traj_len");
  check(d.extraction.lookahead >= 1, "dataset.extraction.lookahead must be >= 1");
  check(d.world.target_ls > 0.0 && d.world.target_ls < 1.0, "dataset.world.target_ls must lie in (0, 1)");
  const auto& b = c.bottleneck;
  check(b.d_m >= 1 && b.width >= 1 && b.d_text >= 1 && b.d_e >= 1, "bottleneck widths must be positive");
  check(b.levels >= 0 && b.levels <= 6, "bottleneck.levels must lie in [0, 6]");
  const auto& l = c.loss;
  check(l.beta >= 0.0 && l.lambda_pi >= 0.0 && l.lambda_sem >= 0.0, "loss weights must be non-negative");
  check(l.lambda_tok > 0.0 && l.lambda_frm > 0.0, "loss.lambda_tok and loss.lambda_frm must be positive");
  check_optim(c.vbb_optim, "vbb_optim");
  check_optim(c.flow_optim, "flow_optim");
  check(c.vbb_optim.batch_size >= 2 || l.lambda_sem == 0.0, "vbb_optim.batch_size must be >= 2 with a semantic loss");
  check(c.flow.hidden >= 1 && c.flow.blocks >= 0 && c.flow.time_freqs >= 1, "flow sizes must be positive");
  check(c.flow.cond_dropout >= 0.0 && c.flow.cond_dropout <= 1.0, "flow.cond_dropout must lie in [0, 1]");
  check(c.sampler.steps >= 1, "sampler.steps must be >= 1");
  check(c.sampler.guidance_scale >= 0.0, "sampler.guidance_scale must be >= 0");
  check(c.composition.overlap >= 0, "composition.overlap must be >= 0");
  check(c.composition.stage_len >= 1, "composition.stage_len must be >= 1");
  check(c.composition.overlap == 0 || c.composition.overlap < c.composition.stage_len,
        "composition.overlap must be smaller than composition.stage_len");
  const int c_factor = 1 << b.levels;
  check(c.composition.stage_len <= (d.traj_len + c_factor - 1) / c_factor * c_factor,
        "composition.stage_len exceeds the generated trajectory length");
  const auto& e = c.eval;
  check(e.test_samples >= 2, "eval.test_samples must be >= 2");
  check(e.retrieval_batch >= 2, "eval.retrieval_batch must be >= 2");
  check(e.draws_per_prompt >= 2, "eval.draws_per_prompt must be >= 2");
  check(e.composition_trials >= 0, "eval.composition_trials must be >= 0");
  check(e.composition_clauses >= 2 && e.composition_clauses <= d.n_behaviors,
        "eval.composition_clauses must lie in [2, n_behaviors]");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingArtifact, "config file " + path.string() + " not found");
  Json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::ConfigInvalid, e.what());
  }
  RunConfig c = run_config_from_json(j);
  if (const char* env = std::getenv("BEHAVE_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') fail(ErrorKind::ConfigInvalid, "BEHAVE_SEED must be an unsigned integer");
    c.seed = v;
  }
  return c;
}

}  // namespace behave
