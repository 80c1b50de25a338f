#include "behave/dataset.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>

#include "behave/errors.hpp"
#include "behave/json_io.hpp"
#include "behave/parallel.hpp"

namespace behave {
namespace {

constexpr std::array<const char*, 8> kBehaviorNames{"walk", "run", "turn", "sit",
                                                     "jump", "kick", "wave", "crouch"};

void validate(const DatasetSpec& spec) {
  require(spec.n_behaviors >= 1, ErrorKind::InvalidSpec, "need at least one behaviour");
  require(spec.n_samples >= 1, ErrorKind::InvalidSpec, "need at least one sample");
  require(!spec.clause_weights.empty(), ErrorKind::InvalidSpec, "clause_weights is empty");
  for (double w : spec.clause_weights) require(w >= 0.0, ErrorKind::InvalidSpec, "negative clause weight");
  require(std::accumulate(spec.clause_weights.begin(), spec.clause_weights.end(), 0.0) > 0.0,
          ErrorKind::InvalidSpec, "clause_weights sum to zero");
  const int max_clauses = static_cast<int>(spec.clause_weights.size());
  require(max_clauses <= spec.n_behaviors, ErrorKind::InvalidSpec,
          "prompts use distinct behaviours, so max clauses cannot exceed the vocabulary");
  require(spec.min_duration >= 1, ErrorKind::InvalidSpec, "min_duration must be positive");
  require(spec.traj_len >= max_clauses * spec.min_duration, ErrorKind::InvalidSpec,
          "traj_len too short for the longest prompt");
  require(spec.direction_noise >= 0.0 && spec.frame_noise >= 0.0 && spec.state_noise >= 0.0,
          ErrorKind::InvalidSpec, "noise levels must be non-negative");
  require(spec.world.d_z >= 1, ErrorKind::InvalidSpec, "d_z must be positive");
  require(spec.extraction.lookahead >= 1, ErrorKind::InvalidSpec, "lookahead must be >= 1");
}

Json world_to_json(const WorldSpec& w) {
  Json j{{"state_dim", w.state_dim},
         {"action_dim", w.action_dim},
         {"d_z", w.d_z},
         {"target_ls", w.target_ls},
         {"sigma_pi", w.sigma_pi},
         {"backward", w.backward == BackwardMapKind::SteadyStateInverse ? "steady_state_inverse" : "random"},
         {"seed", w.seed}};
  if (w.target_lz) j["target_lz"] = *w.target_lz;
  return j;
}

}  // namespace

Json dataset_spec_to_json(const DatasetSpec& s) {
  return Json{{"n_behaviors", s.n_behaviors},
              {"n_samples", s.n_samples},
              {"traj_len", s.traj_len},
              {"clause_weights", s.clause_weights},
              {"min_duration", s.min_duration},
              {"direction_noise", s.direction_noise},
              {"frame_noise", s.frame_noise},
              {"state_noise", s.state_noise},
              {"world", world_to_json(s.world)},
              {"extraction", {{"lookahead", s.extraction.lookahead}, {"norm_floor", s.extraction.norm_floor}}}};
}

static WorldSpec world_from_json(const Json& j) {
  WorldSpec w;
  StrictObject o(j, "spec.world");
  o.get("state_dim", w.state_dim);
  o.get("action_dim", w.action_dim);
  o.get("d_z", w.d_z);
  o.get("target_ls", w.target_ls);
  o.get("sigma_pi", w.sigma_pi);
  o.get("seed", w.seed);
  if (o.has("target_lz")) {
    double lz = 0.0;
    o.get("target_lz", lz);
    w.target_lz = lz;
  }
  std::string backward = "steady_state_inverse";
  o.get("backward", backward);
  if (backward != "random" && backward != "steady_state_inverse")
    fail(ErrorKind::ConfigInvalid, "spec.world.backward must be \"steady_state_inverse\" or \"random\"");
  w.backward = backward == "random" ? BackwardMapKind::Random : BackwardMapKind::SteadyStateInverse;
  o.finish();
  return w;
}

DatasetSpec dataset_spec_from_json(const Json& j) {
  DatasetSpec s;
  StrictObject o(j, "spec");
  o.get("n_behaviors", s.n_behaviors);
  o.get("n_samples", s.n_samples);
  o.get("traj_len", s.traj_len);
  o.get("clause_weights", s.clause_weights);
  o.get("min_duration", s.min_duration);
  o.get("direction_noise", s.direction_noise);
  o.get("frame_noise", s.frame_noise);
  o.get("state_noise", s.state_noise);
  if (o.has("world")) s.world = world_from_json(o.child("world"));
  if (o.has("extraction")) {
    StrictObject e(o.child("extraction"), "spec.extraction");
    e.get("lookahead", s.extraction.lookahead);
    e.get("norm_floor", s.extraction.norm_floor);
    e.finish();
  }
  o.finish();
  return s;
}

Vocabulary::Vocabulary(int n_behaviors) : n_behaviors_(n_behaviors) {
  require(n_behaviors >= 1, ErrorKind::InvalidSpec, "vocabulary needs a behaviour");
  for (int b = 0; b < n_behaviors; ++b)
    names_.push_back(b < static_cast<int>(kBehaviorNames.size()) ? kBehaviorNames[static_cast<std::size_t>(b)]
                                                                  : "b" + std::to_string(b));
  names_.push_back("then");
}

const std::string& Vocabulary::name(int token) const {
  require(token >= 0 && token < size(), ErrorKind::UnknownToken, "token id " + std::to_string(token));
  return names_[static_cast<std::size_t>(token)];
}

int Vocabulary::lookup(const std::string& word) const {
  for (int t = 0; t < size(); ++t)
    if (names_[static_cast<std::size_t>(t)] == word) return t;
  fail(ErrorKind::UnknownToken, "'" + word + "' is not in the vocabulary");
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::istringstream is(text);
  std::vector<int> tokens;
  for (std::string word; is >> word;) tokens.push_back(lookup(word));
  return tokens;
}

std::string Vocabulary::render(const std::vector<int>& tokens) const {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += name(t);
  }
  return out;
}

std::vector<int> Vocabulary::prompt_for(const std::vector<int>& behaviors) const {
  std::vector<int> tokens;
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    if (i > 0) tokens.push_back(separator());
    tokens.push_back(behaviors[i]);
  }
  return tokens;
}

std::vector<int> prompt_behaviors(const Vocabulary& vocab, const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != vocab.separator()) out.push_back(t);
  return out;
}

Matrix behavior_directions(const DatasetSpec& spec) {
  Rng rng(mix_seed(spec.world.seed, 0xD1));
  const int d = spec.world.d_z;
  Matrix dirs(spec.n_behaviors, d);
  if (spec.n_behaviors <= d) {
    const Matrix q = gaussian_matrix(d, d, rng).householderQr().householderQ();
    for (int b = 0; b < spec.n_behaviors; ++b) dirs.row(b) = q.col(b).transpose();
  } else {
    for (int b = 0; b < spec.n_behaviors; ++b) dirs.row(b) = gaussian_vector(d, rng).normalized().transpose();
  }
  return dirs * std::sqrt(static_cast<double>(d));
}

LatentTrajectory behavior_script(const DatasetSpec& spec, const Matrix& directions,
                                 const std::vector<int>& behaviors, Rng& rng) {
  const int K = static_cast<int>(behaviors.size());
  require(K >= 1, ErrorKind::InvalidSpec, "empty behaviour list");
  require(spec.traj_len >= K * spec.min_duration, ErrorKind::InvalidSpec, "traj_len too short");
  const int slack = spec.traj_len - K * spec.min_duration;
  std::vector<int> cuts{0, slack};
  for (int k = 0; k + 1 < K; ++k) cuts.push_back(uniform_int(rng, 0, slack));
  std::sort(cuts.begin(), cuts.end());

  LatentTrajectory script(spec.traj_len, spec.world.d_z);
  Index t = 0;
  for (int k = 0; k < K; ++k) {
    const int duration = spec.min_duration + cuts[static_cast<std::size_t>(k + 1)] - cuts[static_cast<std::size_t>(k)];
    const int b = behaviors[static_cast<std::size_t>(k)];
    require(b >= 0 && b < directions.rows(), ErrorKind::InvalidSpec, "behaviour id out of range");
    const Vector dir = directions.row(b).transpose() + gaussian_vector(spec.world.d_z, rng, spec.direction_noise);
    for (int i = 0; i < duration; ++i, ++t) {
      const Vector frame = dir + gaussian_vector(spec.world.d_z, rng, spec.frame_noise);
      script.row(t) = project_to_sphere(frame).transpose();
    }
  }
  return script;
}

Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed, Exec exec) {
  validate(spec);
  const SyntheticWorld world = SyntheticWorld::random(spec.world);
  const Matrix directions = behavior_directions(spec);
  const Vocabulary vocab(spec.n_behaviors);

  Dataset data;
  data.spec = spec;
  data.seed = seed;
  data.samples.resize(static_cast<std::size_t>(spec.n_samples));
  parallel_for(spec.n_samples, exec, [&](std::ptrdiff_t i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    std::discrete_distribution<int> clause_count(spec.clause_weights.begin(), spec.clause_weights.end());
    const int K = clause_count(rng) + 1;
    std::vector<int> pool(static_cast<std::size_t>(spec.n_behaviors));
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<int> behaviors;
    for (int k = 0; k < K; ++k) {
      const int pick = uniform_int(rng, k, spec.n_behaviors - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
      behaviors.push_back(pool[static_cast<std::size_t>(k)]);
    }
    const LatentTrajectory script = behavior_script(spec, directions, behaviors, rng);
    Vector s1 = world.steady_state(script.row(0).transpose());
    s1 += gaussian_vector(s1.size(), rng, 0.01);

    Sample& sample = data.samples[static_cast<std::size_t>(i)];
    sample.prompt_tokens = vocab.prompt_for(behaviors);
    sample.states = spec.state_noise > 0.0 ? rollout_noisy(world, s1, script, spec.state_noise, rng)
                                           : rollout(world, s1, script);
    sample.latents = extract_latents(world, spec.extraction, sample.states);
  });
  return data;
}

void write_dataset_json(const Dataset& data, const std::filesystem::path& path) {
  Json doc;
  doc["spec"] = dataset_spec_to_json(data.spec);
  doc["seed"] = data.seed;
  Json samples = Json::array();
  for (const Sample& s : data.samples)
    samples.push_back(Json{{"prompt_tokens", s.prompt_tokens},
                           {"states", matrix_to_json(s.states)},
                           {"latents", matrix_to_json(s.latents)}});
  doc["samples"] = std::move(samples);
  write_text_file(path, dump_json(doc));
}

Dataset read_dataset_json(const std::filesystem::path& path) {
  const Json doc = read_json_file(path);
  Dataset data;
  try {
    data.spec = dataset_spec_from_json(doc.at("spec"));
    data.seed = doc.at("seed").get<std::uint64_t>();
    for (const Json& s : doc.at("samples")) {
      Sample sample;
      sample.prompt_tokens = s.at("prompt_tokens").get<std::vector<int>>();
      sample.states = matrix_from_json(s.at("states"), "states");
      sample.latents = matrix_from_json(s.at("latents"), "latents");
      data.samples.push_back(std::move(sample));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
  return data;
}

}  // namespace behave
