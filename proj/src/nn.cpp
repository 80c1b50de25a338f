#include "behave/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "behave/errors.hpp"

namespace behave::nn {

int ParameterStore::add(std::string name, Index rows, Index cols, bool decay, bool trainable) {
  require(find(name) < 0, ErrorKind::InvalidSpec, "duplicate parameter " + name);
  specs_.push_back(ParamSpec{std::move(name), rows, cols, decay, trainable});
  values_.push_back(Matrix::Zero(rows, cols));
  return static_cast<int>(values_.size()) - 1;
}

int ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].name == name) return static_cast<int>(i);
  return -1;
}

Gradients ParameterStore::zero_gradients() const {
  Gradients g;
  g.reserve(values_.size());
  for (const auto& v : values_) g.push_back(Matrix::Zero(v.rows(), v.cols()));
  return g;
}

Index ParameterStore::total_size() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Index ParameterStore::trainable_size() const {
  Index n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (specs_[i].trainable) n += values_[i].size();
  return n;
}

Vector ParameterStore::flatten() const {
  Vector flat(total_size());
  Index at = 0;
  for (const auto& v : values_) {
    flat.segment(at, v.size()) = Eigen::Map<const Vector>(v.data(), v.size());
    at += v.size();
  }
  return flat;
}

void ParameterStore::unflatten(const Vector& flat) {
  require(flat.size() == total_size(), ErrorKind::ShapeMismatch, "flat parameter vector has the wrong size");
  Index at = 0;
  for (auto& v : values_) {
    Eigen::Map<Vector>(v.data(), v.size()) = flat.segment(at, v.size());
    at += v.size();
  }
}

bool ParameterStore::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Matrix& v) { return v.allFinite(); });
}

void zero(Gradients& g) {
  for (auto& m : g) m.setZero();
}

void accumulate(Gradients& into, const Gradients& from, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * from[i];
}

Conv1d Conv1d::create(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel,
                      Index stride, Index pad) {
  Conv1d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.weight = store.add(name + ".weight", in * kernel, out);
  c.bias = store.add(name + ".bias", 1, out, false);
  return c;
}

void Conv1d::init(ParameterStore& store, Rng& rng, double gain) const {
  store.value(weight) = gaussian_matrix(in * kernel, out, rng, gain / std::sqrt(double(in * kernel)));
  store.value(bias).setZero();
}

Matrix Conv1d::im2col(const Matrix& x) const {
  require(x.cols() == in, ErrorKind::ShapeMismatch, "conv input width");
  const Index T = x.rows();
  const Index T_out = output_length(T);
  require(T >= 1 && T_out >= 1, ErrorKind::ShapeMismatch, "conv input too short");
  Matrix cols(T_out, in * kernel);
  for (Index t = 0; t < T_out; ++t)
    for (Index j = 0; j < kernel; ++j) {
      const Index p = std::clamp<Index>(t * stride + j - pad, 0, T - 1);
      cols.block(t, j * in, 1, in) = x.row(p);
    }
  return cols;
}

Matrix Conv1d::forward(const ParameterStore& store, const Matrix& x, Matrix* cols_out) const {
  Matrix cols = im2col(x);
  Matrix y = cols * store.value(weight);
  y.rowwise() += store.value(bias).row(0);
  if (cols_out) *cols_out = std::move(cols);
  return y;
}

Matrix Conv1d::backward(const ParameterStore& store, const Matrix& cols, Index in_len, const Matrix& dy,
                        Gradients& grads) const {
  grads[static_cast<std::size_t>(weight)].noalias() += cols.transpose() * dy;
  grads[static_cast<std::size_t>(bias)].row(0) += dy.colwise().sum();
  const Matrix dcols = dy * store.value(weight).transpose();
  Matrix dx = Matrix::Zero(in_len, in);
  for (Index t = 0; t < dy.rows(); ++t)
    for (Index j = 0; j < kernel; ++j) {
      const Index p = std::clamp<Index>(t * stride + j - pad, 0, in_len - 1);
      dx.row(p) += dcols.block(t, j * in, 1, in);
    }
  return dx;
}

Linear Linear::create(ParameterStore& store, const std::string& name, Index in, Index out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", in, out);
  l.bias = store.add(name + ".bias", 1, out, false);
  return l;
}

void Linear::init(ParameterStore& store, Rng& rng, double gain) const {
  store.value(weight) = gaussian_matrix(in, out, rng, gain / std::sqrt(double(in)));
  store.value(bias).setZero();
}

Matrix Linear::forward(const ParameterStore& store, const Matrix& x) const {
  require(x.cols() == in, ErrorKind::ShapeMismatch, "linear input width");
  Matrix y = x * store.value(weight);
  y.rowwise() += store.value(bias).row(0);
  return y;
}

Matrix Linear::backward(const ParameterStore& store, const Matrix& x, const Matrix& dy, Gradients& grads) const {
  grads[static_cast<std::size_t>(weight)].noalias() += x.transpose() * dy;
  grads[static_cast<std::size_t>(bias)].row(0) += dy.colwise().sum();
  return dy * store.value(weight).transpose();
}

Matrix upsample2(const Matrix& x) {
  Matrix y(2 * x.rows(), x.cols());
  for (Index t = 0; t < x.rows(); ++t) {
    y.row(2 * t) = x.row(t);
    y.row(2 * t + 1) = x.row(t);
  }
  return y;
}

Matrix upsample2_backward(const Matrix& dy) {
  Matrix dx(dy.rows() / 2, dy.cols());
  for (Index t = 0; t < dx.rows(); ++t) dx.row(t) = dy.row(2 * t) + dy.row(2 * t + 1);
  return dx;
}

double scheduled_lr(const AdamConfig& cfg, int step) {
  if (cfg.warmup > 0 && step < cfg.warmup) {
    const double frac = static_cast<double>(step) / cfg.warmup;
    return cfg.lr * (cfg.warmup_start + (1.0 - cfg.warmup_start) * frac);
  }
  const int decay_steps = std::max(1, cfg.total_steps - cfg.warmup);
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup) / decay_steps, 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

Adam::Adam(const ParameterStore& store, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& v : store.values()) {
    m_.push_back(Matrix::Zero(v.rows(), v.cols()));
    v_.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
}

void Adam::step(ParameterStore& store, const Gradients& grads) {
  const double lr = scheduled_lr(cfg_, t_);
  ++t_;
  last_lr_ = lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamSpec& spec = store.specs()[i];
    if (!spec.trainable) continue;
    Matrix& p = store.value(static_cast<int>(i));
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseAbs2();
    if (spec.decay) p *= 1.0 - lr * cfg_.weight_decay;
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace behave::nn
