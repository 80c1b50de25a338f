#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "behave/bottleneck.hpp"
#include "behave/dataset.hpp"
#include "behave/nn.hpp"

namespace behave {

struct OptimConfig {
  int steps = 2000;
  int batch_size = 32;
  /// Base learning rate; the effective rate is lr * lr_scale.
  double lr = 5e-5;
  double lr_scale = 1.0;
  double weight_decay = 5e-4;
  int warmup = 200;
  double warmup_start = 0.1;
  double min_lr_ratio = 0.1;

  nn::AdamConfig adam() const;
};

/// Cycles through shuffled permutations of [0, n), reshuffling at each pass.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, Rng& rng);
  std::vector<std::size_t> next();

 private:
  std::size_t n_, batch_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
};

struct VbbRecord {
  int step = 0;
  double total = 0.0;
  double rec = 0.0;
  double kl = 0.0;
  double sem = 0.0;
};

struct VbbTrainResult {
  std::vector<VbbRecord> history;
  std::string rng_state;
};

/// Adam on the full bottleneck objective. Deterministic given seed.
/// Throws DivergenceDetected on a non-finite loss or parameter.
VbbTrainResult train_bottleneck(const std::vector<const Sample*>& data, const SyntheticWorld& world,
                                BottleneckModel& model, const LossConfig& loss, const OptimConfig& opt,
                                std::uint64_t seed, Exec exec = Exec::Parallel,
                                const std::function<void(const VbbRecord&)>& on_step = {});

std::string rng_state_string(const Rng& rng);

/// Exponential moving average of a series (for trend checks and logging).
std::vector<double> smooth(const std::vector<double>& values, double alpha = 0.05);

}  // namespace behave
