#include "behave/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "behave/errors.hpp"

namespace behave {

nn::AdamConfig OptimConfig::adam() const {
  nn::AdamConfig a;
  a.lr = lr * lr_scale;
  a.weight_decay = weight_decay;
  a.warmup = warmup;
  a.warmup_start = warmup_start;
  a.total_steps = steps;
  a.min_lr_ratio = min_lr_ratio;
  return a;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, Rng& rng)
    : n_(n), batch_(std::min(batch_size, n)), rng_(rng), order_(n), cursor_(n) {
  require(n > 0, ErrorKind::InvalidSpec, "cannot sample batches from an empty dataset");
  require(batch_size > 0, ErrorKind::InvalidSpec, "batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_);
  while (batch.size() < batch_) {
    if (cursor_ == n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::vector<double> smooth(const std::vector<double>& values, double alpha) {
  std::vector<double> out;
  out.reserve(values.size());
  double acc = values.empty() ? 0.0 : values.front();
  for (double v : values) {
    acc = (1.0 - alpha) * acc + alpha * v;
    out.push_back(acc);
  }
  return out;
}

VbbTrainResult train_bottleneck(const std::vector<const Sample*>& data, const SyntheticWorld& world,
                                BottleneckModel& model, const LossConfig& loss, const OptimConfig& opt,
                                std::uint64_t seed, Exec exec,
                                const std::function<void(const VbbRecord&)>& on_step) {
  require(!data.empty(), ErrorKind::InvalidSpec, "training set is empty");
  require(opt.steps >= 0, ErrorKind::InvalidSpec, "negative step count");
  Rng rng(seed);
  BatchSampler sampler(data.size(), static_cast<std::size_t>(opt.batch_size), rng);
  nn::Adam adam(model.params(), opt.adam());
  VbbTrainResult result;
  result.history.reserve(static_cast<std::size_t>(opt.steps));

  for (int step = 0; step < opt.steps; ++step) {
    const auto indices = sampler.next();
    std::vector<VbbItem> batch;
    std::vector<Matrix> noises;
    for (std::size_t idx : indices) {
      const Sample& s = *data[idx];
      batch.push_back(VbbItem{&s.latents, &s.states, &s.prompt_tokens});
      const auto [rows, cols] = posterior_shape(model, s.latents.rows());
      noises.push_back(gaussian_matrix(rows, cols, rng));
    }
    nn::Gradients grads;
    const VbbLoss l = vbb_loss(model, world, batch, noises, loss, &grads, exec);
    if (!std::isfinite(l.total))
      fail(ErrorKind::DivergenceDetected, "bottleneck loss is not finite at step " + std::to_string(step));
    adam.step(model.params(), grads);
    if (!model.params().all_finite())
      fail(ErrorKind::DivergenceDetected, "bottleneck parameters became non-finite at step " + std::to_string(step));
    const VbbRecord rec{step, l.total, l.rec, l.kl, l.sem};
    result.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.rng_state = rng_state_string(rng);
  return result;
}

}  // namespace behave
