#include <benchmark/benchmark.h>

#include "behave/alignment.hpp"
#include "behave/bottleneck.hpp"
#include "behave/config.hpp"
#include "behave/dataset.hpp"
#include "behave/pipeline.hpp"
#include "toy.hpp"

using namespace behave;

namespace {

Matrix unit_rows(Index rows, Index cols, Rng& rng) {
  Matrix m = gaussian_matrix(rows, cols, rng);
  for (Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).norm();
  return m;
}

struct SimInput {
  std::vector<Matrix> programs, texts;
  explicit SimInput(int B) {
    Rng rng(1);
    for (int i = 0; i < B; ++i) {
      programs.push_back(unit_rows(8, 32, rng));
      texts.push_back(unit_rows(3, 32, rng));
    }
  }
};

void BM_similarity_reference(benchmark::State& state) {
  const SimInput in(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix_reference(in.programs, in.texts, {0.1, 0.1}));
}

void BM_similarity(benchmark::State& state) {
  const SimInput in(static_cast<int>(state.range(0)));
  const Exec exec = state.range(1) ? Exec::Parallel : Exec::Serial;
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix(in.programs, in.texts, {0.1, 0.1}, exec));
}

void BM_vbb_loss(benchmark::State& state) {
  const RunConfig cfg = default_run_config();
  const SyntheticWorld world = make_world(cfg);
  const BottleneckModel model = fresh_bottleneck(cfg);
  const testing::ToyBatch batch =
      testing::toy_batch(world, model, std::vector<int>(static_cast<std::size_t>(state.range(0)), 64), 2);
  const Exec exec = state.range(1) ? Exec::Parallel : Exec::Serial;
  for (auto _ : state) {
    nn::Gradients g;
    benchmark::DoNotOptimize(vbb_loss(model, world, batch.items(), batch.noise, cfg.loss, &g, exec).total);
  }
}

void BM_generate_dataset(benchmark::State& state) {
  RunConfig cfg = default_run_config();
  cfg.dataset.n_samples = static_cast<int>(state.range(0));
  const Exec exec = state.range(1) ? Exec::Parallel : Exec::Serial;
  for (auto _ : state) benchmark::DoNotOptimize(make_dataset(cfg, exec).samples.size());
}

}  // namespace

BENCHMARK(BM_similarity_reference)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_similarity)->ArgsProduct({{32}, {0, 1}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_vbb_loss)->ArgsProduct({{32}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_generate_dataset)->ArgsProduct({{200}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
