#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "behave/bottleneck.hpp"
#include "behave/composition.hpp"
#include "behave/config.hpp"
#include "behave/dataset.hpp"
#include "behave/flow.hpp"
#include "behave/metrics.hpp"

namespace behave {

struct RunPaths {
  explicit RunPaths(const std::filesystem::path& out_dir);

  std::filesystem::path dir;
  std::filesystem::path dataset, vbb, vbb_history, flow, flow_history, eval_json, eval_csv, plots;
};

SyntheticWorld make_world(const RunConfig& cfg);

Dataset make_dataset(const RunConfig& cfg, Exec exec = Exec::Parallel);
/// Fresh samples from the same world, used for every held-out metric.
Dataset make_test_set(const RunConfig& cfg, Exec exec = Exec::Parallel);

std::vector<const Sample*> sample_ptrs(const Dataset& data);

BottleneckModel fresh_bottleneck(const RunConfig& cfg);
VbbTrainResult train_bottleneck_stage(const RunConfig& cfg, const Dataset& data, BottleneckModel& model,
                                      Exec exec = Exec::Parallel,
                                      const std::function<void(const VbbRecord&)>& on_step = {});

/// Posterior of every sample under the (frozen) encoder, with its text context.
std::vector<FlowTarget> flow_targets(const BottleneckModel& vbb, const Dataset& data, Exec exec = Exec::Parallel);

FlowModel fresh_flow(const RunConfig& cfg);
FlowTrainResult train_flow_stage(const RunConfig& cfg, const BottleneckModel& vbb, const Dataset& data,
                                 FlowModel& flow, Exec exec = Exec::Parallel,
                                 const std::function<void(const FlowRecord&)>& on_step = {});

void save_bottleneck(const std::filesystem::path& path, const RunConfig& cfg, const BottleneckModel& model,
                     const std::string& rng_state);
BottleneckModel load_bottleneck(const std::filesystem::path& path, const RunConfig& cfg);
void save_flow(const std::filesystem::path& path, const RunConfig& cfg, const FlowModel& model,
               const std::string& rng_state);
FlowModel load_flow(const std::filesystem::path& path, const RunConfig& cfg);

struct ReconMetrics {
  double recon_mse = 0.0;  // mean squared error per latent entry
  double action_kl = 0.0;  // against the sphere-projected reconstruction
};
ReconMetrics reconstruction_metrics(const BottleneckModel& vbb, const SyntheticWorld& world, const Dataset& data,
                                    Exec exec = Exec::Parallel);

/// Batches of held-out samples whose token multisets are pairwise distinct
/// (identical multisets have identical text embeddings and cannot be told apart).
std::vector<std::vector<std::size_t>> retrieval_batches(const Dataset& data, int batch_size);

struct RetrievalSummary {
  /// Ranked by the frame-token similarity R the projections are trained on.
  std::map<int, double> top_k;
  /// Ranked by cosine of the mean-pooled embeddings; mm_dist uses the same.
  std::map<int, double> pooled_top_k;
  double mm_dist = 0.0;
  int batches = 0;
  /// Held-out pairs inside the margin regime and, of those, correctly retrieved.
  int margin_pairs = 0;
  int margin_correct = 0;
};
RetrievalSummary retrieval_summary(const BottleneckModel& vbb, const Dataset& data, int batch_size,
                                   MatchTemperatures temps);

struct PrototypeCheck {
  double accuracy = 0.0;
  int draws = 0;
  double diversity = 0.0;
  double moment_gap = 0.0;
};
/// Flow draws for every single-behaviour prompt, decoded and matched to the
/// nearest single-behaviour training prototype by cosine.
PrototypeCheck prototype_check(const Generator& g, const RunConfig& cfg, const Dataset& train,
                               Exec exec = Exec::Parallel);

struct CompositionTrial {
  std::vector<int> behaviors;
  double order_compose = 0.0, order_single = 0.0;
  double transition_compose = 0.0, transition_single = 0.0;
};

struct CompositionSummary {
  std::vector<CompositionTrial> trials;
  double order_compose = 0.0, order_single = 0.0;
  double transition_compose = 0.0, transition_single = 0.0;
  int order_wins = 0, order_losses = 0;
  int transition_wins = 0, transition_losses = 0;
  double order_p = 1.0, transition_p = 1.0;

  Json to_json() const;
};

/// Order accuracy of a generation: its re-extracted latents are cut at the
/// given latent boundaries, each piece embedded through the frozen encoder
/// and P_m, and matched against the clause text embeddings.
double generation_order_accuracy(const Generator& g, const ExtractionConfig& extraction, const Generation& gen,
                                 const std::vector<Index>& latent_boundaries,
                                 const std::vector<std::vector<int>>& clauses);

/// Paired compose vs single-shot trials on random multi-clause prompts, both
/// rolled out from the zero state with the same seed per trial.
CompositionSummary composition_comparison(const Generator& g, const RunConfig& cfg, Exec exec = Exec::Parallel);

struct EvalResult {
  EvalReport report;
  Json details;
};

EvalResult evaluate(const RunConfig& cfg, const Dataset& train, const Dataset& test, const SyntheticWorld& world,
                    const BottleneckModel& vbb, const FlowModel& flow, Exec exec = Exec::Parallel);

struct CompressionRow {
  int compression = 0;
  double recon_mse = 0.0;
  double action_kl = 0.0;
};

/// Trains one bottleneck per level count and reports held-out reconstruction.
std::vector<CompressionRow> sweep_compression(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                                              const std::vector<int>& levels, Exec exec = Exec::Parallel);
std::string compression_csv(const std::vector<CompressionRow>& rows);

}  // namespace behave
