#include "behave/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "behave/checkpoint.hpp"
#include "behave/errors.hpp"
#include "behave/latent_geometry.hpp"
#include "behave/parallel.hpp"

namespace behave {

RunPaths::RunPaths(const std::filesystem::path& out_dir)
    : dir(out_dir),
      dataset(out_dir / "dataset.json"),
      vbb(out_dir / "vbb.json"),
      vbb_history(out_dir / "vbb_history.jsonl"),
      flow(out_dir / "flow.json"),
      flow_history(out_dir / "flow_history.jsonl"),
      eval_json(out_dir / "eval.json"),
      eval_csv(out_dir / "eval.csv"),
      plots(out_dir / "plots") {}

SyntheticWorld make_world(const RunConfig& cfg) { return SyntheticWorld::random(cfg.dataset.world); }

Dataset make_dataset(const RunConfig& cfg, Exec exec) { return generate_dataset(cfg.dataset, cfg.data_seed(), exec); }

Dataset make_test_set(const RunConfig& cfg, Exec exec) {
  DatasetSpec spec = cfg.dataset;
  spec.n_samples = cfg.eval.test_samples;
  return generate_dataset(spec, cfg.test_data_seed(), exec);
}

std::vector<const Sample*> sample_ptrs(const Dataset& data) {
  std::vector<const Sample*> out;
  for (const Sample& s : data.samples) out.push_back(&s);
  return out;
}

BottleneckModel fresh_bottleneck(const RunConfig& cfg) { return BottleneckModel(cfg.bottleneck_config(), cfg.vbb_init_seed()); }

VbbTrainResult train_bottleneck_stage(const RunConfig& cfg, const Dataset& data, BottleneckModel& model, Exec exec,
                                      const std::function<void(const VbbRecord&)>& on_step) {
  return train_bottleneck(sample_ptrs(data), make_world(cfg), model, cfg.loss, cfg.vbb_optim, cfg.vbb_train_seed(), exec,
                          on_step);
}

std::vector<FlowTarget> flow_targets(const BottleneckModel& vbb, const Dataset& data, Exec exec) {
  std::vector<FlowTarget> out(data.samples.size());
  parallel_for(static_cast<std::ptrdiff_t>(data.samples.size()), exec, [&](std::ptrdiff_t i) {
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    const Posterior p = vbb.encode(s.latents);
    FlowTarget& t = out[static_cast<std::size_t>(i)];
    t.mu = p.mu;
    t.sigma = (0.5 * p.log_var.array()).exp().matrix();
    t.ctx = text_context(vbb, s.prompt_tokens);
  });
  return out;
}

FlowModel fresh_flow(const RunConfig& cfg) { return FlowModel(cfg.flow_config(), cfg.flow_init_seed()); }

FlowTrainResult train_flow_stage(const RunConfig& cfg, const BottleneckModel& vbb, const Dataset& data, FlowModel& flow,
                                 Exec exec, const std::function<void(const FlowRecord&)>& on_step) {
  return train_flow(flow_targets(vbb, data, exec), flow, cfg.flow_optim, cfg.flow_train_seed(), on_step);
}

namespace {

Json bottleneck_hyperparams(const RunConfig& cfg) {
  const Json full = run_config_to_json(cfg);
  return Json{{"bottleneck", full.at("bottleneck")},
              {"d_z", cfg.bottleneck_config().d_z},
              {"vocab_size", cfg.bottleneck_config().vocab_size},
              {"loss", full.at("loss")},
              {"optim", full.at("vbb_optim")},
              {"seed", cfg.seed}};
}

Json flow_hyperparams(const RunConfig& cfg) {
  const Json full = run_config_to_json(cfg);
  const FlowConfig f = cfg.flow_config();
  return Json{{"flow", full.at("flow")},
              {"frames", f.frames},
              {"d_m", f.d_m},
              {"d_ctx", f.d_ctx},
              {"optim", full.at("flow_optim")},
              {"seed", cfg.seed}};
}

}  // namespace

void save_bottleneck(const std::filesystem::path& path, const RunConfig& cfg, const BottleneckModel& model,
                     const std::string& rng_state) {
  save_checkpoint(path, "bottleneck", model.params(), bottleneck_hyperparams(cfg), rng_state);
}

BottleneckModel load_bottleneck(const std::filesystem::path& path, const RunConfig& cfg) {
  const Json manifest = read_manifest(path, "bottleneck");
  BottleneckModel model = fresh_bottleneck(cfg);
  load_parameters(path, manifest, model.params());
  return model;
}

void save_flow(const std::filesystem::path& path, const RunConfig& cfg, const FlowModel& model,
               const std::string& rng_state) {
  save_checkpoint(path, "flow", model.params(), flow_hyperparams(cfg), rng_state);
}

FlowModel load_flow(const std::filesystem::path& path, const RunConfig& cfg) {
  const Json manifest = read_manifest(path, "flow");
  FlowModel model = fresh_flow(cfg);
  load_parameters(path, manifest, model.params());
  return model;
}

ReconMetrics reconstruction_metrics(const BottleneckModel& vbb, const SyntheticWorld& world, const Dataset& data,
                                    Exec exec) {
  require(!data.samples.empty(), ErrorKind::InvalidSpec, "no samples to evaluate");
  const std::size_t n = data.samples.size();
  std::vector<double> mse(n), kl(n);
  parallel_for(static_cast<std::ptrdiff_t>(n), exec, [&](std::ptrdiff_t i) {
    const Sample& s = data.samples[static_cast<std::size_t>(i)];
    const LatentTrajectory z_hat = vbb.reconstruct(s.latents);
    mse[static_cast<std::size_t>(i)] = (s.latents - z_hat).squaredNorm() / static_cast<double>(s.latents.size());
    kl[static_cast<std::size_t>(i)] = action_kl(world, s.states, s.latents, project_rows(z_hat));
  });
  ReconMetrics r;
  for (std::size_t i = 0; i < n; ++i) {
    r.recon_mse += mse[i];
    r.action_kl += kl[i];
  }
  r.recon_mse /= static_cast<double>(n);
  r.action_kl /= static_cast<double>(n);
  return r;
}

std::vector<std::vector<std::size_t>> retrieval_batches(const Dataset& data, int batch_size) {
  std::vector<std::size_t> pool(data.samples.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  std::vector<std::vector<std::size_t>> out;
  for (;;) {
    std::set<std::vector<int>> seen;
    std::vector<std::size_t> batch, rest;
    for (std::size_t idx : pool) {
      std::vector<int> key = data.samples[idx].prompt_tokens;
      std::sort(key.begin(), key.end());
      if (static_cast<int>(batch.size()) < batch_size && seen.insert(key).second)
        batch.push_back(idx);
      else
        rest.push_back(idx);
    }
    if (static_cast<int>(batch.size()) < batch_size) break;
    out.push_back(std::move(batch));
    pool = std::move(rest);
  }
  return out;
}

RetrievalSummary retrieval_summary(const BottleneckModel& vbb, const Dataset& data, int batch_size,
                                   MatchTemperatures temps) {
  const auto batches = retrieval_batches(data, batch_size);
  if (batches.empty())
    fail(ErrorKind::TooFewSamples, "not enough distinct prompts for one retrieval batch of " + std::to_string(batch_size));
  RetrievalSummary out;
  out.batches = static_cast<int>(batches.size());
  const std::vector<int> ks{1, 5};
  for (int k : ks) out.top_k[k] = out.pooled_top_k[k] = 0.0;
  for (const auto& batch : batches) {
    const Index B = static_cast<Index>(batch.size());
    Matrix P(B, vbb.config().d_e), Y(B, vbb.config().d_e);
    std::vector<Matrix> programs, texts;
    for (Index i = 0; i < B; ++i) {
      const Sample& s = data.samples[batch[static_cast<std::size_t>(i)]];
      const CompactProgram mu = vbb.encode(s.latents).mu;
      programs.push_back(vbb.project_program(mu));
      texts.push_back(vbb.project_text(s.prompt_tokens));
      P.row(i) = program_embedding(vbb, mu).transpose();
      Y.row(i) = text_embedding(vbb, s.prompt_tokens).transpose();
    }
    const RetrievalResult learned = retrieval_from_scores(similarity_matrix(programs, texts, temps, Exec::Serial), ks);
    const RetrievalResult r = retrieval_metrics(P, Y, ks);
    for (int k : ks) {
      out.top_k[k] += learned.top_k.at(k) / static_cast<double>(batches.size());
      out.pooled_top_k[k] += r.top_k.at(k) / static_cast<double>(batches.size());
    }
    out.mm_dist += r.mm_dist / static_cast<double>(batches.size());

    for (Index i = 0; i < B; ++i) {
      const double eta = 1.0 - Y.row(i).dot(P.row(i));
      double max_neg = -INFINITY;
      bool correct = true;
      for (Index j = 0; j < B; ++j) {
        if (j == i) continue;
        max_neg = std::max(max_neg, Y.row(i).dot(Y.row(j)));
        correct = correct && P.row(i).dot(Y.row(i)) > P.row(i).dot(Y.row(j));
      }
      const double Delta = 1.0 - max_neg;
      if (Delta > eta + std::sqrt(2.0 * std::max(0.0, eta))) {
        ++out.margin_pairs;
        out.margin_correct += correct ? 1 : 0;
      }
    }
  }
  return out;
}

PrototypeCheck prototype_check(const Generator& g, const RunConfig& cfg, const Dataset& train, Exec exec) {
  const int nb = cfg.dataset.n_behaviors;
  const Index d = cfg.dataset.world.d_z;
  Matrix proto = Matrix::Zero(nb, d);
  std::vector<int> counts(static_cast<std::size_t>(nb), 0);
  std::vector<const Matrix*> reference;
  for (const Sample& s : train.samples) {
    if (s.prompt_tokens.size() != 1) continue;
    const int b = s.prompt_tokens[0];
    proto.row(b) += s.latents.colwise().mean();
    ++counts[static_cast<std::size_t>(b)];
    reference.push_back(&s.latents);
  }
  std::vector<int> behaviors;
  for (int b = 0; b < nb; ++b)
    if (counts[static_cast<std::size_t>(b)] > 0) {
      proto.row(b).normalize();
      behaviors.push_back(b);
    }
  require(!behaviors.empty(), ErrorKind::TooFewSamples, "no single-behaviour prompts in the training set");

  const int K = cfg.eval.draws_per_prompt;
  const std::size_t jobs = behaviors.size() * static_cast<std::size_t>(K);
  std::vector<CompactProgram> programs(jobs);
  std::vector<LatentTrajectory> decoded(jobs);
  std::vector<int> hit(jobs, 0);
  const std::uint64_t base = mix_seed(cfg.eval_seed(), 2);
  parallel_for(static_cast<std::ptrdiff_t>(jobs), exec, [&](std::ptrdiff_t j) {
    const int b = behaviors[static_cast<std::size_t>(j) / static_cast<std::size_t>(K)];
    programs[static_cast<std::size_t>(j)] = generate_program(g, {b}, cfg.sampler, mix_seed(base, static_cast<std::uint64_t>(j)));
    const LatentTrajectory z = decode_program(g, programs[static_cast<std::size_t>(j)]);
    const Vector mean = z.colwise().mean().transpose();
    int best = -1;
    double best_sim = -INFINITY;
    for (int c : behaviors) {
      const double sim = proto.row(c).dot(mean);
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    hit[static_cast<std::size_t>(j)] = best == b ? 1 : 0;
    decoded[static_cast<std::size_t>(j)] = z;
  });

  PrototypeCheck out;
  out.draws = static_cast<int>(jobs);
  int hits = 0;
  for (int h : hit) hits += h;
  out.accuracy = static_cast<double>(hits) / static_cast<double>(jobs);
  for (std::size_t p = 0; p < behaviors.size(); ++p) {
    std::vector<Matrix> group(programs.begin() + static_cast<std::ptrdiff_t>(p * K),
                              programs.begin() + static_cast<std::ptrdiff_t>((p + 1) * K));
    out.diversity += diversity(group) / static_cast<double>(behaviors.size());
  }
  Index gen_rows = 0, ref_rows = 0;
  for (const auto& z : decoded) gen_rows += z.rows();
  for (const auto* z : reference) ref_rows += z->rows();
  Matrix gen(gen_rows, d), ref(ref_rows, d);
  Index r = 0;
  for (const auto& z : decoded) {
    gen.middleRows(r, z.rows()) = z;
    r += z.rows();
  }
  r = 0;
  for (const auto* z : reference) {
    ref.middleRows(r, z->rows()) = *z;
    r += z->rows();
  }
  out.moment_gap = moment_gap(gen, ref);
  return out;
}

double generation_order_accuracy(const Generator& g, const ExtractionConfig& extraction, const Generation& gen,
                                 const std::vector<Index>& latent_boundaries,
                                 const std::vector<std::vector<int>>& clauses) {
  const LatentTrajectory z = extract_latents(g.world, extraction, gen.states);
  std::vector<Vector> segments, texts;
  Index start = 0;
  for (std::size_t n = 0; n <= latent_boundaries.size(); ++n) {
    const Index end = n < latent_boundaries.size() ? latent_boundaries[n] + 1 : z.rows();
    require(end > start && end <= z.rows(), ErrorKind::BoundaryOutOfRange, "segment boundaries out of order");
    segments.push_back(latent_embedding(g.vbb, z.middleRows(start, end - start)));
    start = end;
  }
  for (const auto& c : clauses) texts.push_back(text_embedding(g.vbb, c));
  return order_accuracy(segments, texts);
}

Json CompositionSummary::to_json() const {
  return Json{{"trials", trials.size()},
              {"order_accuracy", {{"compose", order_compose}, {"single_shot", order_single}}},
              {"transition", {{"compose", transition_compose}, {"single_shot", transition_single}}},
              {"order_sign_test", {{"wins", order_wins}, {"losses", order_losses}, {"p", order_p}}},
              {"transition_sign_test", {{"wins", transition_wins}, {"losses", transition_losses}, {"p", transition_p}}}};
}

CompositionSummary composition_comparison(const Generator& g, const RunConfig& cfg, Exec exec) {
  const int trials = cfg.eval.composition_trials;
  const int N = cfg.eval.composition_clauses;
  const Vocabulary vocab(cfg.dataset.n_behaviors);
  const Vector s1 = Vector::Zero(g.world.state_dim());
  const std::uint64_t base = mix_seed(cfg.eval_seed(), 3);
  CompositionSummary out;
  out.trials.resize(static_cast<std::size_t>(trials));
  parallel_for(trials, exec, [&](std::ptrdiff_t t) {
    Rng rng(mix_seed(base, static_cast<std::uint64_t>(t)));
    std::vector<int> pool(static_cast<std::size_t>(cfg.dataset.n_behaviors));
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    std::vector<int> behaviors;
    for (int k = 0; k < N; ++k) {
      const int pick = uniform_int(rng, k, cfg.dataset.n_behaviors - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
      behaviors.push_back(pool[static_cast<std::size_t>(k)]);
    }
    const std::vector<int> tokens = vocab.prompt_for(behaviors);
    const CompositePrompt prompt = split_prompt(tokens, vocab.separator());
    const std::uint64_t seed = rng();

    const Generation comp = generate_composed(g, prompt, cfg.composition, s1, seed, Exec::Serial);
    const Generation single = generate_single(g, tokens, cfg.sampler, s1, seed);
    const std::vector<Index> uniform = uniform_boundaries(single.latents.rows(), N);
    std::vector<Index> uniform_states;
    for (Index b : uniform) uniform_states.push_back(b + 1);

    CompositionTrial& tr = out.trials[static_cast<std::size_t>(t)];
    tr.behaviors = behaviors;
    tr.order_compose = generation_order_accuracy(g, cfg.dataset.extraction, comp, comp.boundaries, prompt.clauses);
    tr.order_single = generation_order_accuracy(g, cfg.dataset.extraction, single, uniform, prompt.clauses);
    tr.transition_compose = transition_score(comp.states, comp.state_boundaries);
    tr.transition_single = transition_score(single.states, uniform_states);
  });
  for (const auto& tr : out.trials) {
    out.order_compose += tr.order_compose;
    out.order_single += tr.order_single;
    out.transition_compose += tr.transition_compose;
    out.transition_single += tr.transition_single;
    out.order_wins += tr.order_compose > tr.order_single ? 1 : 0;
    out.order_losses += tr.order_compose < tr.order_single ? 1 : 0;
    out.transition_wins += tr.transition_compose < tr.transition_single ? 1 : 0;
    out.transition_losses += tr.transition_compose > tr.transition_single ? 1 : 0;
  }
  if (trials > 0) {
    const double n = trials;
    out.order_compose /= n;
    out.order_single /= n;
    out.transition_compose /= n;
    out.transition_single /= n;
  }
  out.order_p = sign_test_p(out.order_wins, out.order_losses);
  out.transition_p = sign_test_p(out.transition_wins, out.transition_losses);
  return out;
}

EvalResult evaluate(const RunConfig& cfg, const Dataset& train, const Dataset& test, const SyntheticWorld& world,
                    const BottleneckModel& vbb, const FlowModel& flow, Exec exec) {
  const Generator g{vbb, flow, world};
  const ReconMetrics recon = reconstruction_metrics(vbb, world, test, exec);
  const RetrievalSummary retrieval = retrieval_summary(vbb, test, cfg.eval.retrieval_batch, cfg.loss.temperatures());
  const PrototypeCheck proto = prototype_check(g, cfg, train, exec);
  const CompositionSummary comp = composition_comparison(g, cfg, exec);

  EvalResult out;
  EvalReport& r = out.report;
  r.order_accuracy = comp.order_compose;
  r.transition = comp.transition_compose;
  r.action_kl = recon.action_kl;
  r.recon_mse = recon.recon_mse;
  r.retrieval_top_k = retrieval.top_k;
  r.mm_dist = retrieval.mm_dist;
  r.diversity = proto.diversity;
  r.moment_gap = proto.moment_gap;
  r.n_samples = static_cast<int>(test.samples.size());
  out.details = Json{{"report", r.to_json()},
                     {"composition", comp.to_json()},
                     {"retrieval",
                      {{"batches", retrieval.batches},
                       {"pooled_top1", retrieval.pooled_top_k.at(1)},
                       {"pooled_top5", retrieval.pooled_top_k.at(5)},
                       {"batch_size", cfg.eval.retrieval_batch},
                       {"margin_pairs", retrieval.margin_pairs},
                       {"margin_correct", retrieval.margin_correct}}},
                     {"prototype", {{"accuracy", proto.accuracy}, {"draws", proto.draws}}}};
  return out;
}

std::vector<CompressionRow> sweep_compression(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                                              const std::vector<int>& levels, Exec exec) {
  const SyntheticWorld world = make_world(cfg);
  std::vector<CompressionRow> rows;
  for (int lv : levels) {
    RunConfig c = cfg;
    c.bottleneck.levels = lv;
    validate(c);
    BottleneckModel model = fresh_bottleneck(c);
    train_bottleneck_stage(c, train, model, exec);
    const ReconMetrics m = reconstruction_metrics(model, world, test, exec);
    rows.push_back({1 << lv, m.recon_mse, m.action_kl});
  }
  return rows;
}

std::string compression_csv(const std::vector<CompressionRow>& rows) {
  std::string out = "compression,recon_mse,action_kl\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.compression, r.recon_mse, r.action_kl);
    out += buf;
  }
  return out;
}

}  // namespace behave
