#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "behave/nn.hpp"
#include "behave/training.hpp"
#include "behave/types.hpp"

namespace behave {

struct FlowConfig {
  int frames = 8;  // T_m
  int d_m = 48;
  int d_ctx = 32;
  int hidden = 256;
  int blocks = 2;
  int time_freqs = 8;
  double cond_dropout = 0.2;
  /// Draw r on a stratified grid across the batch instead of i.i.d.
  bool stratified_time = false;
};

struct SamplerConfig {
  int steps = 16;
  double guidance_scale = 1.5;
};

/// sin/cos features of r at frequencies pi * 2^k.
Vector time_embedding(double r, int n_freq);

/// Text-conditioned velocity field v(m(r), r, ctx): a residual MLP over the
/// flattened program with the time features and context concatenated to its
/// input. A learned null context stands in for dropped conditioning.
class FlowModel {
 public:
  FlowModel(const FlowConfig& cfg, std::uint64_t seed);

  const FlowConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  Vector null_context() const;

  /// ctx == nullptr selects the null context.
  CompactProgram velocity(const CompactProgram& m_r, double r, const Vector* ctx) const;

  /// Rows are flattened programs; returns flattened velocities.
  Matrix velocity_batch(const Matrix& programs, const Vector& r, const Matrix& ctx) const;

  struct Layers {
    nn::Linear in;
    std::vector<nn::Linear> hidden_a, hidden_b;
    nn::Linear out;
    int null_ctx = -1;
  };
  const Layers& layers() const { return layers_; }

 private:
  FlowConfig cfg_;
  nn::ParameterStore params_;
  Layers layers_;
};

/// (1 - r) eps + r m.
Matrix interpolate(const Matrix& eps, const CompactProgram& m, double r);

/// Mean squared error between v(m(r), r, ctx) and m - eps.
double fm_loss(const FlowModel& model, const Matrix& eps, const CompactProgram& m, double r, const Vector* ctx);

struct FlowItem {
  Matrix eps;
  CompactProgram m;
  double r = 0.0;
  Vector ctx;
  /// Use the null context instead of ctx.
  bool drop = false;
};

/// Batch-mean flow-matching loss, optionally with gradients for all blocks.
double fm_loss_batch(const FlowModel& model, const std::vector<FlowItem>& items, nn::Gradients* grads = nullptr);

/// Euler integration of dm/dr = v from r = 0 to 1 with classifier-free
/// guidance v_u + g (v_c - v_u) (g == 1 uses v_c alone).
CompactProgram sample(const FlowModel& model, const Vector& ctx, const SamplerConfig& cfg, const Matrix& init_noise);

struct FlowTarget {
  Matrix mu;
  Matrix sigma;
  Vector ctx;
};

struct FlowRecord {
  int step = 0;
  double loss = 0.0;
};

struct FlowTrainResult {
  std::vector<FlowRecord> history;
  std::string rng_state;
};

/// Each draw samples m = mu + sigma * n afresh, so targets are resampled from
/// the posterior every time a pair is revisited.
FlowTrainResult train_flow(const std::vector<FlowTarget>& targets, FlowModel& model, const OptimConfig& opt,
                           std::uint64_t seed, const std::function<void(const FlowRecord&)>& on_step = {});

}  // namespace behave
