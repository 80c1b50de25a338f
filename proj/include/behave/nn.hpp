#pragma once

#include <string>
#include <vector>

#include "behave/types.hpp"

namespace behave::nn {

struct ParamSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  bool decay = true;
  bool trainable = true;
};

using Gradients = std::vector<Matrix>;

/// Named parameter blocks in a fixed declaration order. That order is the
/// checkpoint blob order and the flat-vector order.
class ParameterStore {
 public:
  int add(std::string name, Index rows, Index cols, bool decay = true, bool trainable = true);

  Matrix& value(int id) { return values_[static_cast<std::size_t>(id)]; }
  const Matrix& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return values_.size(); }
  const std::vector<ParamSpec>& specs() const { return specs_; }
  const std::vector<Matrix>& values() const { return values_; }
  int find(const std::string& name) const;

  Gradients zero_gradients() const;
  Index total_size() const;
  Index trainable_size() const;
  Vector flatten() const;
  void unflatten(const Vector& flat);
  bool all_finite() const;

 private:
  std::vector<ParamSpec> specs_;
  std::vector<Matrix> values_;
};

void zero(Gradients& g);
/// into += scale * from
void accumulate(Gradients& into, const Gradients& from, double scale = 1.0);

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }
/// dy masked by (pre > 0).
inline Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

/// 1-D convolution over the time axis of a [T x in] sequence with replicate
/// padding. Weight is stored [in * kernel x out] with tap-major rows.
struct Conv1d {
  int weight = -1;
  int bias = -1;
  Index in = 0, out = 0, kernel = 1, stride = 1, pad = 0;

  static Conv1d create(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel,
                       Index stride, Index pad);
  void init(ParameterStore& store, Rng& rng, double gain) const;

  Index output_length(Index T) const { return (T + 2 * pad - kernel) / stride + 1; }
  Matrix im2col(const Matrix& x) const;
  /// Returns y; cols receives the unfolded input for the backward pass.
  Matrix forward(const ParameterStore& store, const Matrix& x, Matrix* cols = nullptr) const;
  /// Accumulates weight/bias gradients and returns dL/dx of length in_len.
  Matrix backward(const ParameterStore& store, const Matrix& cols, Index in_len, const Matrix& dy,
                  Gradients& grads) const;
};

/// Row-wise affine map y = x W + b, W [in x out].
struct Linear {
  int weight = -1;
  int bias = -1;
  Index in = 0, out = 0;

  static Linear create(ParameterStore& store, const std::string& name, Index in, Index out);
  void init(ParameterStore& store, Rng& rng, double gain) const;
  Matrix forward(const ParameterStore& store, const Matrix& x) const;
  Matrix backward(const ParameterStore& store, const Matrix& x, const Matrix& dy, Gradients& grads) const;
};

/// Each frame repeated twice along time.
Matrix upsample2(const Matrix& x);
Matrix upsample2_backward(const Matrix& dy);

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  int warmup = 200;
  double warmup_start = 0.1;
  int total_steps = 1000;
  double min_lr_ratio = 0.1;
};

/// Linear warm-up from warmup_start * lr, then cosine decay to min_lr_ratio * lr.
double scheduled_lr(const AdamConfig& cfg, int step);

/// Adam with decoupled weight decay on blocks flagged `decay`.
class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig cfg);
  void step(ParameterStore& store, const Gradients& grads);
  int steps_taken() const { return t_; }
  double last_lr() const { return last_lr_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace behave::nn
