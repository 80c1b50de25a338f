#include "behave/bottleneck.hpp"

#include <string>

#include "behave/errors.hpp"
#include "behave/parallel.hpp"

namespace behave {
namespace {

struct ConvTape {
  Matrix cols;
  Matrix pre;
  Index in_len = 0;
};

Matrix conv_forward(const nn::ParameterStore& p, const nn::Conv1d& c, const Matrix& x, ConvTape* tape) {
  if (!tape) return c.forward(p, x);
  tape->in_len = x.rows();
  tape->pre = c.forward(p, x, &tape->cols);
  return tape->pre;
}

Matrix conv_backward(const nn::ParameterStore& p, const nn::Conv1d& c, const ConvTape& tape, const Matrix& dy,
                     nn::Gradients& g) {
  return c.backward(p, tape.cols, tape.in_len, dy, g);
}

struct EncoderTape {
  ConvTape in;
  std::vector<ConvTape> down, res;
  ConvTape mu, log_var;
};

struct DecoderTape {
  ConvTape in;
  std::vector<ConvTape> up, res;
  ConvTape out;
};

void encoder_forward(const BottleneckModel& model, const Matrix& x, Matrix& mu, Matrix& log_var,
                     EncoderTape* tape) {
  const auto& P = model.params();
  const auto& L = model.layers();
  const std::size_t levels = L.enc_down.size();
  if (tape) {
    tape->down.resize(levels);
    tape->res.resize(levels);
  }
  Matrix h = nn::relu(conv_forward(P, L.enc_in, x, tape ? &tape->in : nullptr));
  for (std::size_t l = 0; l < levels; ++l) {
    const Matrix d = nn::relu(conv_forward(P, L.enc_down[l], h, tape ? &tape->down[l] : nullptr));
    h = d + conv_forward(P, L.enc_res[l], d, tape ? &tape->res[l] : nullptr);
  }
  mu = conv_forward(P, L.enc_mu, h, tape ? &tape->mu : nullptr);
  log_var = conv_forward(P, L.enc_logvar, h, tape ? &tape->log_var : nullptr);
}

void encoder_backward(const BottleneckModel& model, const EncoderTape& tape, const Matrix& d_mu,
                      const Matrix& d_log_var, nn::Gradients& g) {
  const auto& P = model.params();
  const auto& L = model.layers();
  Matrix dh = conv_backward(P, L.enc_mu, tape.mu, d_mu, g) + conv_backward(P, L.enc_logvar, tape.log_var, d_log_var, g);
  for (std::size_t l = L.enc_down.size(); l-- > 0;) {
    const Matrix dd = dh + conv_backward(P, L.enc_res[l], tape.res[l], dh, g);
    dh = conv_backward(P, L.enc_down[l], tape.down[l], nn::relu_backward(tape.down[l].pre, dd), g);
  }
  conv_backward(P, L.enc_in, tape.in, nn::relu_backward(tape.in.pre, dh), g);
}

Matrix decoder_forward(const BottleneckModel& model, const Matrix& m, DecoderTape* tape) {
  const auto& P = model.params();
  const auto& L = model.layers();
  const std::size_t levels = L.dec_up.size();
  if (tape) {
    tape->up.resize(levels);
    tape->res.resize(levels);
  }
  Matrix g = nn::relu(conv_forward(P, L.dec_in, m, tape ? &tape->in : nullptr));
  for (std::size_t l = 0; l < levels; ++l) {
    const Matrix d = nn::relu(conv_forward(P, L.dec_up[l], nn::upsample2(g), tape ? &tape->up[l] : nullptr));
    g = d + conv_forward(P, L.dec_res[l], d, tape ? &tape->res[l] : nullptr);
  }
  return conv_forward(P, L.dec_out, g, tape ? &tape->out : nullptr);
}

Matrix decoder_backward(const BottleneckModel& model, const DecoderTape& tape, const Matrix& dy, nn::Gradients& g) {
  const auto& P = model.params();
  const auto& L = model.layers();
  Matrix dg = conv_backward(P, L.dec_out, tape.out, dy, g);
  for (std::size_t l = L.dec_up.size(); l-- > 0;) {
    const Matrix dd = dg + conv_backward(P, L.dec_res[l], tape.res[l], dg, g);
    const Matrix du = conv_backward(P, L.dec_up[l], tape.up[l], nn::relu_backward(tape.up[l].pre, dd), g);
    dg = nn::upsample2_backward(du);
  }
  return conv_backward(P, L.dec_in, tape.in, nn::relu_backward(tape.in.pre, dg), g);
}

Matrix pad_frames(const Matrix& z, Index padded) {
  if (padded == z.rows()) return z;
  Matrix out(padded, z.cols());
  out.topRows(z.rows()) = z;
  for (Index t = z.rows(); t < padded; ++t) out.row(t) = z.row(z.rows() - 1);
  return out;
}

Matrix token_rows(const BottleneckModel& model, const std::vector<int>& tokens) {
  require(!tokens.empty(), ErrorKind::InvalidSpec, "text prompt has no tokens");
  const Matrix& table = model.params().value(model.layers().token_table);
  Matrix rows(static_cast<Index>(tokens.size()), table.cols());
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const int t = tokens[k];
    require(t >= 0 && t < table.rows(), ErrorKind::UnknownToken, "token id " + std::to_string(t));
    rows.row(static_cast<Index>(k)) = table.row(t);
  }
  return rows;
}

}  // namespace

CompactProgram sample_posterior(const Posterior& p, const Matrix& noise) {
  if (noise.rows() != p.mu.rows() || noise.cols() != p.mu.cols())
    fail(ErrorKind::ShapeMismatch, "reparameterization noise shape");
  return p.mu.array() + (0.5 * p.log_var.array()).exp() * noise.array();
}

double kl_prior_loss(const Posterior& p) {
  require(p.mu.size() > 0 && p.mu.rows() == p.log_var.rows() && p.mu.cols() == p.log_var.cols(),
          ErrorKind::ShapeMismatch, "posterior shape");
  require(p.log_var.allFinite(), ErrorKind::NonFiniteInput, "posterior log variance");
  const double sum =
      0.5 * (p.mu.array().square() + p.log_var.array().exp() - p.log_var.array() - 1.0).sum();
  return sum / static_cast<double>(p.mu.size());
}

double reconstruction_loss(const LatentTrajectory& z, const LatentTrajectory& z_hat, const StateTrajectory& states,
                           const SyntheticWorld& world, double lambda_pi) {
  if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols())
    fail(ErrorKind::DimensionMismatch, "reconstruction operands differ in shape");
  require(z.rows() >= 1, ErrorKind::DimensionMismatch, "empty latent sequence");
  const double mse = (z - z_hat).rowwise().squaredNorm().sum() / static_cast<double>(z.rows());
  if (lambda_pi == 0.0) return mse;
  return mse + lambda_pi * action_kl(world, states, z, z_hat);
}

BottleneckModel::BottleneckModel(const BottleneckConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  require(cfg.d_z >= 1 && cfg.d_m >= 1 && cfg.width >= 1 && cfg.levels >= 0 && cfg.d_text >= 1 && cfg.d_e >= 1 &&
              cfg.vocab_size >= 1,
          ErrorKind::InvalidSpec, "bottleneck dimensions must be positive");
  auto& P = params_;
  auto& L = layers_;
  const Index W = cfg.width;
  L.enc_in = nn::Conv1d::create(P, "enc.in", cfg.d_z, W, 3, 1, 1);
  for (int l = 0; l < cfg.levels; ++l) {
    L.enc_down.push_back(nn::Conv1d::create(P, "enc.down" + std::to_string(l), W, W, 4, 2, 1));
    L.enc_res.push_back(nn::Conv1d::create(P, "enc.res" + std::to_string(l), W, W, 3, 1, 1));
  }
  L.enc_mu = nn::Conv1d::create(P, "enc.mu", W, cfg.d_m, 1, 1, 0);
  L.enc_logvar = nn::Conv1d::create(P, "enc.logvar", W, cfg.d_m, 1, 1, 0);
  L.dec_in = nn::Conv1d::create(P, "dec.in", cfg.d_m, W, 3, 1, 1);
  for (int l = 0; l < cfg.levels; ++l) {
    L.dec_up.push_back(nn::Conv1d::create(P, "dec.up" + std::to_string(l), W, W, 3, 1, 1));
    L.dec_res.push_back(nn::Conv1d::create(P, "dec.res" + std::to_string(l), W, W, 3, 1, 1));
  }
  L.dec_out = nn::Conv1d::create(P, "dec.out", W, cfg.d_z, 3, 1, 1);
  L.proj_m = nn::Linear::create(P, "proj_m", cfg.d_m, cfg.d_e);
  L.proj_y = nn::Linear::create(P, "proj_y", cfg.d_text, cfg.d_e);
  L.log_scale = P.add("logit_scale", 1, 1, false);
  L.token_table = P.add("token_table", cfg.vocab_size, cfg.d_text, false, false);

  Rng rng(seed);
  const double relu_gain = std::sqrt(2.0);
  L.enc_in.init(P, rng, relu_gain);
  for (int l = 0; l < cfg.levels; ++l) {
    L.enc_down[static_cast<std::size_t>(l)].init(P, rng, relu_gain);
    L.enc_res[static_cast<std::size_t>(l)].init(P, rng, 0.5);
  }
  L.enc_mu.init(P, rng, 1.0);
  L.enc_logvar.init(P, rng, 0.1);
  P.value(L.enc_logvar.bias).setConstant(-2.0);
  L.dec_in.init(P, rng, relu_gain);
  for (int l = 0; l < cfg.levels; ++l) {
    L.dec_up[static_cast<std::size_t>(l)].init(P, rng, relu_gain);
    L.dec_res[static_cast<std::size_t>(l)].init(P, rng, 0.5);
  }
  L.dec_out.init(P, rng, 1.0);
  L.proj_m.init(P, rng, 1.0);
  L.proj_y.init(P, rng, 1.0);
  P.value(L.log_scale)(0, 0) = cfg.logit_scale_init;
  P.value(L.token_table) = normalize_rows(gaussian_matrix(cfg.vocab_size, cfg.d_text, rng));
}

Index BottleneckModel::padded_length(Index T) const {
  require(T >= 1, ErrorKind::DimensionMismatch, "empty latent sequence");
  const Index c = cfg_.compression();
  if (T % c == 0) return T;
  if (!cfg_.pad_inputs)
    fail(ErrorKind::LengthNotCompressible,
         "length " + std::to_string(T) + " is not a multiple of the compression factor " + std::to_string(c));
  return (T / c + 1) * c;
}

Posterior BottleneckModel::encode(const LatentTrajectory& z) const {
  require(z.cols() == cfg_.d_z, ErrorKind::DimensionMismatch, "latent width does not match the bottleneck");
  require_finite(z, "latent trajectory");
  Posterior p;
  p.input_frames = z.rows();
  encoder_forward(*this, pad_frames(z, padded_length(z.rows())), p.mu, p.log_var, nullptr);
  return p;
}

LatentTrajectory BottleneckModel::decode(const CompactProgram& m) const {
  if (m.rows() < 1 || m.cols() != cfg_.d_m) fail(ErrorKind::ShapeMismatch, "program shape does not match d_m");
  return decoder_forward(*this, m, nullptr);
}

LatentTrajectory BottleneckModel::reconstruct(const LatentTrajectory& z) const {
  const Posterior p = encode(z);
  return decode(p.mu).topRows(z.rows());
}

Matrix BottleneckModel::project_program(const CompactProgram& m) const {
  return normalize_rows(layers_.proj_m.forward(params_, m));
}

Matrix BottleneckModel::project_text(const std::vector<int>& tokens) const {
  return normalize_rows(layers_.proj_y.forward(params_, token_rows(*this, tokens)));
}

double BottleneckModel::logit_scale() const { return std::exp(params_.value(layers_.log_scale)(0, 0)); }

std::pair<Index, Index> posterior_shape(const BottleneckModel& model, Index T) {
  return {model.padded_length(T) / model.config().compression(), model.config().d_m};
}

namespace {

struct ItemWork {
  EncoderTape enc;
  DecoderTape dec;
  Matrix mu, log_var, m, d_zhat;
  Matrix u_m, u_y, tokens_raw;
  Matrix m_tilde, y_tilde;
  double rec = 0.0;
  double kl = 0.0;
};

}  // namespace

VbbLoss vbb_loss(const BottleneckModel& model, const SyntheticWorld& world, const std::vector<VbbItem>& batch,
                 const std::vector<Matrix>& noises, const LossConfig& cfg, nn::Gradients* grads, Exec exec) {
  require(!batch.empty(), ErrorKind::DegenerateBatch, "empty batch");
  require(noises.size() == batch.size(), ErrorKind::ShapeMismatch, "one noise matrix per batch item");
  require(cfg.beta >= 0.0 && cfg.lambda_pi >= 0.0 && cfg.lambda_sem >= 0.0, ErrorKind::InvalidSpec,
          "loss weights must be non-negative");
  const bool semantic = cfg.lambda_sem > 0.0;
  if (semantic) require(batch.size() >= 2, ErrorKind::DegenerateBatch, "semantic loss needs two or more pairs");
  const bool want_grad = grads != nullptr;
  const auto& P = model.params();
  const auto& L = model.layers();
  const Matrix& W_z = world.W_z();
  const double inv_var = 1.0 / (world.sigma_pi() * world.sigma_pi());
  const auto n = static_cast<std::ptrdiff_t>(batch.size());

  std::vector<ItemWork> work(batch.size());
  parallel_for(n, exec, [&](std::ptrdiff_t i) {
    const VbbItem& item = batch[static_cast<std::size_t>(i)];
    ItemWork& w = work[static_cast<std::size_t>(i)];
    const Matrix& z = *item.latents;
    require(z.cols() == model.config().d_z && z.cols() == world.d_z(), ErrorKind::DimensionMismatch,
            "latent width mismatch");
    const Matrix& states = *item.states;
    require(states.cols() == world.state_dim() && (states.rows() == z.rows() || states.rows() == z.rows() + 1),
            ErrorKind::DimensionMismatch, "states do not align with latents");
    const Index T = z.rows();
    encoder_forward(model, pad_frames(z, model.padded_length(T)), w.mu, w.log_var, want_grad ? &w.enc : nullptr);
    const Matrix& noise = noises[static_cast<std::size_t>(i)];
    if (noise.rows() != w.mu.rows() || noise.cols() != w.mu.cols())
      fail(ErrorKind::ShapeMismatch, "noise shape for item " + std::to_string(i));
    w.m = w.mu.array() + (0.5 * w.log_var.array()).exp() * noise.array();
    const Matrix z_hat = decoder_forward(model, w.m, want_grad ? &w.dec : nullptr);

    // Reconstruction: latent MSE plus policy KL. With a linear Gaussian head
    // the KL only depends on W_z (z_hat - z).
    const Matrix diff = z_hat.topRows(T) - z;
    const Matrix action_gap = diff * W_z.transpose();
    w.rec = (diff.squaredNorm() + cfg.lambda_pi * 0.5 * inv_var * action_gap.squaredNorm()) / double(T);
    w.kl = kl_prior_loss(Posterior{w.mu, w.log_var, T});
    if (want_grad) {
      w.d_zhat = Matrix::Zero(z_hat.rows(), z_hat.cols());
      w.d_zhat.topRows(T) = (2.0 * diff + cfg.lambda_pi * inv_var * action_gap * W_z) / double(T);
    }
    if (semantic) {
      w.u_m = L.proj_m.forward(P, w.m);
      w.m_tilde = normalize_rows(w.u_m);
      w.tokens_raw = token_rows(model, *item.tokens);
      w.u_y = L.proj_y.forward(P, w.tokens_raw);
      w.y_tilde = normalize_rows(w.u_y);
    }
  });

  VbbLoss loss;
  for (const auto& w : work) {
    loss.rec += w.rec;
    loss.kl += w.kl;
  }
  loss.rec /= double(n);
  loss.kl /= double(n);

  SimilarityGrad sim_grad;
  double d_log_scale = 0.0;
  if (semantic) {
    std::vector<Matrix> programs, texts;
    for (const auto& w : work) {
      programs.push_back(w.m_tilde);
      texts.push_back(w.y_tilde);
    }
    const Matrix R = similarity_matrix(programs, texts, cfg.temperatures(), exec);
    const ContrastiveGrad cg = contrastive_loss_and_grad(R, model.logit_scale());
    loss.sem = cg.loss;
    if (want_grad) {
      sim_grad = similarity_backward(programs, texts, cfg.temperatures(), cfg.lambda_sem * cg.dR, exec);
      d_log_scale = cfg.lambda_sem * cg.d_log_gamma;
    }
  }
  loss.total = loss.rec + cfg.beta * loss.kl + cfg.lambda_sem * loss.sem;
  if (!want_grad) return loss;

  std::vector<nn::Gradients> item_grads(batch.size());
  const double scale = 1.0 / double(n);
  parallel_for(n, exec, [&](std::ptrdiff_t i) {
    const auto ui = static_cast<std::size_t>(i);
    ItemWork& w = work[ui];
    nn::Gradients g = P.zero_gradients();
    Matrix d_m = decoder_backward(model, w.dec, scale * w.d_zhat, g);
    if (semantic) {
      d_m += L.proj_m.backward(P, w.m, normalize_rows_backward(w.u_m, sim_grad.d_programs[ui]), g);
      L.proj_y.backward(P, w.tokens_raw, normalize_rows_backward(w.u_y, sim_grad.d_texts[ui]), g);
    }
    const double kl_scale = scale * cfg.beta / double(w.mu.size());
    const Matrix noise = noises[ui];
    const Matrix sigma = (0.5 * w.log_var.array()).exp();
    const Matrix d_mu = d_m + kl_scale * w.mu;
    const Matrix d_log_var = (d_m.array() * noise.array() * 0.5 * sigma.array() +
                              kl_scale * 0.5 * (w.log_var.array().exp() - 1.0))
                                 .matrix();
    encoder_backward(model, w.enc, d_mu, d_log_var, g);
    item_grads[ui] = std::move(g);
  });

  *grads = P.zero_gradients();
  for (const auto& g : item_grads) nn::accumulate(*grads, g);
  (*grads)[static_cast<std::size_t>(L.log_scale)](0, 0) += d_log_scale;
  return loss;
}

Vector program_embedding(const BottleneckModel& model, const CompactProgram& m) {
  const Vector pooled = model.project_program(m).colwise().mean().transpose();
  return pooled.normalized();
}

Vector latent_embedding(const BottleneckModel& model, const LatentTrajectory& z) {
  return program_embedding(model, model.encode(z).mu);
}

Vector text_embedding(const BottleneckModel& model, const std::vector<int>& tokens) {
  return text_context(model, tokens).normalized();
}

Vector text_context(const BottleneckModel& model, const std::vector<int>& tokens) {
  return model.project_text(tokens).colwise().mean().transpose();
}

}  // namespace behave
