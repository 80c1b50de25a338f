#include "behave/flow.hpp"

#include <cmath>
#include <numbers>

#include "behave/errors.hpp"

namespace behave {
namespace {

Eigen::RowVectorXd flatten_row(const Matrix& m) {
  Eigen::RowVectorXd row(m.size());
  for (Index t = 0; t < m.rows(); ++t) row.segment(t * m.cols(), m.cols()) = m.row(t);
  return row;
}

Matrix unflatten_row(const Eigen::RowVectorXd& row, Index frames, Index width) {
  Matrix m(frames, width);
  for (Index t = 0; t < frames; ++t) m.row(t) = row.segment(t * width, width);
  return m;
}

struct FlowTape {
  Matrix input;
  std::vector<Matrix> h;      // residual stream before each block, plus the final one
  std::vector<Matrix> a_pre;  // pre-activation inside each block
  Matrix out_in;              // relu(final h)
};

Matrix assemble_input(const FlowConfig& cfg, const Matrix& programs, const Vector& r, const Matrix& ctx) {
  const Index B = programs.rows();
  const Index n_time = 2 * cfg.time_freqs;
  Matrix input(B, programs.cols() + n_time + cfg.d_ctx);
  input.leftCols(programs.cols()) = programs;
  for (Index b = 0; b < B; ++b) input.block(b, programs.cols(), 1, n_time) = time_embedding(r(b), cfg.time_freqs).transpose();
  input.rightCols(cfg.d_ctx) = ctx;
  return input;
}

Matrix flow_forward(const FlowModel& model, const Matrix& input, FlowTape* tape) {
  const auto& P = model.params();
  const auto& L = model.layers();
  Matrix h = L.in.forward(P, input);
  for (std::size_t k = 0; k < L.hidden_a.size(); ++k) {
    Matrix pre = L.hidden_a[k].forward(P, h);
    const Matrix a = nn::relu(pre);
    if (tape) {
      tape->h.push_back(h);
      tape->a_pre.push_back(std::move(pre));
    }
    h += L.hidden_b[k].forward(P, a);
  }
  Matrix act = nn::relu(h);
  Matrix out = L.out.forward(P, act);
  if (tape) {
    tape->input = input;
    tape->h.push_back(std::move(h));
    tape->out_in = std::move(act);
  }
  return out;
}

/// Returns dL/d(input).
Matrix flow_backward(const FlowModel& model, const FlowTape& tape, const Matrix& d_out, nn::Gradients& g) {
  const auto& P = model.params();
  const auto& L = model.layers();
  Matrix dh = nn::relu_backward(tape.h.back(), L.out.backward(P, tape.out_in, d_out, g));
  for (std::size_t k = L.hidden_a.size(); k-- > 0;) {
    const Matrix a = nn::relu(tape.a_pre[k]);
    const Matrix da = L.hidden_b[k].backward(P, a, dh, g);
    dh += L.hidden_a[k].backward(P, tape.h[k], nn::relu_backward(tape.a_pre[k], da), g);
  }
  return L.in.backward(P, tape.input, dh, g);
}

}  // namespace

Vector time_embedding(double r, int n_freq) {
  Vector e(2 * n_freq);
  for (int k = 0; k < n_freq; ++k) {
    const double f = std::numbers::pi * std::ldexp(1.0, k);
    e(2 * k) = std::sin(f * r);
    e(2 * k + 1) = std::cos(f * r);
  }
  return e;
}

FlowModel::FlowModel(const FlowConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  require(cfg.frames >= 1 && cfg.d_m >= 1 && cfg.d_ctx >= 1 && cfg.hidden >= 1 && cfg.blocks >= 0 &&
              cfg.time_freqs >= 1,
          ErrorKind::InvalidSpec, "flow dimensions must be positive");
  require(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0, ErrorKind::InvalidSpec,
          "cond_dropout must be a probability");
  auto& P = params_;
  auto& L = layers_;
  const Index flat = static_cast<Index>(cfg.frames) * cfg.d_m;
  const Index in_width = flat + 2 * cfg.time_freqs + cfg.d_ctx;
  L.in = nn::Linear::create(P, "flow.in", in_width, cfg.hidden);
  for (int k = 0; k < cfg.blocks; ++k) {
    L.hidden_a.push_back(nn::Linear::create(P, "flow.block" + std::to_string(k) + ".a", cfg.hidden, cfg.hidden));
    L.hidden_b.push_back(nn::Linear::create(P, "flow.block" + std::to_string(k) + ".b", cfg.hidden, cfg.hidden));
  }
  L.out = nn::Linear::create(P, "flow.out", cfg.hidden, flat);
  L.null_ctx = P.add("flow.null_context", 1, cfg.d_ctx, false);

  Rng rng(seed);
  L.in.init(P, rng, 1.0);
  for (int k = 0; k < cfg.blocks; ++k) {
    L.hidden_a[static_cast<std::size_t>(k)].init(P, rng, std::sqrt(2.0));
    L.hidden_b[static_cast<std::size_t>(k)].init(P, rng, 0.5);
  }
  L.out.init(P, rng, 0.5);
  P.value(L.null_ctx) = gaussian_matrix(1, cfg.d_ctx, rng, 0.1);
}

Vector FlowModel::null_context() const { return params_.value(layers_.null_ctx).row(0).transpose(); }

Matrix FlowModel::velocity_batch(const Matrix& programs, const Vector& r, const Matrix& ctx) const {
  require(programs.cols() == static_cast<Index>(cfg_.frames) * cfg_.d_m, ErrorKind::ShapeMismatch,
          "program does not match the flow model's frame count and width");
  require(r.size() == programs.rows() && ctx.rows() == programs.rows() && ctx.cols() == cfg_.d_ctx,
          ErrorKind::ShapeMismatch, "flow batch shapes");
  return flow_forward(*this, assemble_input(cfg_, programs, r, ctx), nullptr);
}

CompactProgram FlowModel::velocity(const CompactProgram& m_r, double r, const Vector* ctx) const {
  if (m_r.rows() != cfg_.frames || m_r.cols() != cfg_.d_m) fail(ErrorKind::ShapeMismatch, "program shape");
  const Vector c = ctx ? *ctx : null_context();
  require(c.size() == cfg_.d_ctx, ErrorKind::ShapeMismatch, "context width");
  const Matrix v = velocity_batch(flatten_row(m_r), Vector::Constant(1, r), c.transpose());
  return unflatten_row(v.row(0), cfg_.frames, cfg_.d_m);
}

Matrix interpolate(const Matrix& eps, const CompactProgram& m, double r) {
  if (eps.rows() != m.rows() || eps.cols() != m.cols()) fail(ErrorKind::ShapeMismatch, "interpolation endpoints");
  if (!(r >= 0.0 && r <= 1.0)) fail(ErrorKind::RangeError, "interpolation time must lie in [0, 1]");
  if (r == 0.0) return eps;
  if (r == 1.0) return m;
  return (1.0 - r) * eps + r * m;
}

double fm_loss(const FlowModel& model, const Matrix& eps, const CompactProgram& m, double r, const Vector* ctx) {
  const Matrix v = model.velocity(interpolate(eps, m, r), r, ctx);
  return (v - (m - eps)).squaredNorm() / static_cast<double>(m.size());
}

double fm_loss_batch(const FlowModel& model, const std::vector<FlowItem>& items, nn::Gradients* grads) {
  require(!items.empty(), ErrorKind::DegenerateBatch, "empty flow batch");
  const FlowConfig& cfg = model.config();
  const Index B = static_cast<Index>(items.size());
  const Index flat = static_cast<Index>(cfg.frames) * cfg.d_m;
  Matrix programs(B, flat), targets(B, flat), ctx(B, cfg.d_ctx);
  Vector r(B);
  const Vector null_ctx = model.null_context();
  for (Index b = 0; b < B; ++b) {
    const FlowItem& it = items[static_cast<std::size_t>(b)];
    if (it.m.rows() != cfg.frames || it.m.cols() != cfg.d_m)
      fail(ErrorKind::ShapeMismatch, "flow target does not match the model's program shape");
    programs.row(b) = flatten_row(interpolate(it.eps, it.m, it.r));
    targets.row(b) = flatten_row(it.m - it.eps);
    r(b) = it.r;
    if (it.drop) {
      ctx.row(b) = null_ctx.transpose();
    } else {
      require(it.ctx.size() == cfg.d_ctx, ErrorKind::ShapeMismatch, "context width");
      ctx.row(b) = it.ctx.transpose();
    }
  }
  FlowTape tape;
  const Matrix v = flow_forward(model, assemble_input(cfg, programs, r, ctx), grads ? &tape : nullptr);
  const Matrix resid = v - targets;
  const double denom = static_cast<double>(flat) * static_cast<double>(B);
  const double loss = resid.squaredNorm() / denom;
  if (grads) {
    *grads = model.params().zero_gradients();
    const Matrix d_input = flow_backward(model, tape, (2.0 / denom) * resid, *grads);
    auto& d_null = (*grads)[static_cast<std::size_t>(model.layers().null_ctx)];
    for (Index b = 0; b < B; ++b)
      if (items[static_cast<std::size_t>(b)].drop) d_null.row(0) += d_input.block(b, d_input.cols() - cfg.d_ctx, 1, cfg.d_ctx);
  }
  return loss;
}

CompactProgram sample(const FlowModel& model, const Vector& ctx, const SamplerConfig& cfg, const Matrix& init_noise) {
  require(cfg.steps >= 1, ErrorKind::InvalidSpec, "sampler needs at least one step");
  require(cfg.guidance_scale >= 0.0, ErrorKind::InvalidSpec, "guidance scale must be non-negative");
  CompactProgram m = init_noise;
  const double h = 1.0 / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) {
    const double r = k * h;
    Matrix v = model.velocity(m, r, &ctx);
    if (cfg.guidance_scale != 1.0) {
      const Matrix v_uncond = model.velocity(m, r, nullptr);
      v = v_uncond + cfg.guidance_scale * (v - v_uncond);
    }
    m += h * v;
    if (!m.allFinite()) fail(ErrorKind::NonFiniteState, "flow sample diverged at step " + std::to_string(k));
  }
  return m;
}

FlowTrainResult train_flow(const std::vector<FlowTarget>& targets, FlowModel& model, const OptimConfig& opt,
                           std::uint64_t seed, const std::function<void(const FlowRecord&)>& on_step) {
  require(!targets.empty(), ErrorKind::InvalidSpec, "flow training set is empty");
  Rng rng(seed);
  BatchSampler sampler(targets.size(), static_cast<std::size_t>(opt.batch_size), rng);
  nn::Adam adam(model.params(), opt.adam());
  const FlowConfig& cfg = model.config();
  FlowTrainResult result;
  for (int step = 0; step < opt.steps; ++step) {
    const auto indices = sampler.next();
    std::vector<FlowItem> items;
    const double offset = uniform(rng);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const FlowTarget& t = targets[indices[b]];
      FlowItem it;
      it.m = t.mu.array() + t.sigma.array() * gaussian_matrix(t.mu.rows(), t.mu.cols(), rng).array();
      it.eps = gaussian_matrix(t.mu.rows(), t.mu.cols(), rng);
      it.r = cfg.stratified_time ? (static_cast<double>(b) + offset) / static_cast<double>(indices.size()) : uniform(rng);
      it.ctx = t.ctx;
      it.drop = uniform(rng) < cfg.cond_dropout;
      items.push_back(std::move(it));
    }
    nn::Gradients grads;
    const double loss = fm_loss_batch(model, items, &grads);
    if (!std::isfinite(loss)) fail(ErrorKind::DivergenceDetected, "flow loss is not finite at step " + std::to_string(step));
    adam.step(model.params(), grads);
    if (!model.params().all_finite())
      fail(ErrorKind::DivergenceDetected, "flow parameters became non-finite at step " + std::to_string(step));
    result.history.push_back({step, loss});
    if (on_step) on_step(result.history.back());
  }
  result.rng_state = rng_state_string(rng);
  return result;
}

}  // namespace behave
