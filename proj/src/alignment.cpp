#include "behave/alignment.hpp"

#include <cmath>
#include <string>

#include "behave/errors.hpp"
#include "behave/parallel.hpp"

namespace behave {
namespace {

constexpr double kUnitTolerance = 1e-6;

void check_unit_rows(const Matrix& m, const char* what) {
  for (Index r = 0; r < m.rows(); ++r)
    if (std::abs(m.row(r).norm() - 1.0) > kUnitTolerance)
      fail(ErrorKind::NonUnitInput, std::string(what) + " row " + std::to_string(r) + " is not unit norm");
}

void check_batch(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts, MatchTemperatures temps) {
  require(temps.token > 0.0 && temps.frame > 0.0, ErrorKind::RangeError, "temperatures must be positive");
  require(!programs.empty() && !texts.empty(), ErrorKind::DegenerateBatch, "empty similarity batch");
  const Index d = programs.front().cols();
  for (const auto& p : programs) {
    require(p.rows() >= 1 && p.cols() == d, ErrorKind::ShapeMismatch, "program shape");
    check_unit_rows(p, "program frame");
  }
  for (const auto& t : texts) {
    require(t.rows() >= 1 && t.cols() == d, ErrorKind::ShapeMismatch, "text shape");
    check_unit_rows(t, "text token");
  }
}

/// Softmax over each row of cosine / lambda_tok, and the pooled scores.
struct PairScores {
  Vector F;
  Vector w;
  Matrix token_weights;  // [T_m x K]
  double R = 0.0;
};

PairScores pair_scores(const Matrix& program, const Matrix& text, MatchTemperatures temps) {
  PairScores s;
  const Matrix scaled = (program * text.transpose()) / temps.token;
  const Vector row_max = scaled.rowwise().maxCoeff();
  s.token_weights = (scaled.colwise() - row_max).array().exp();
  const Vector sums = s.token_weights.rowwise().sum();
  s.token_weights.array().colwise() /= sums.array();
  const double log_k = std::log(static_cast<double>(text.rows()));
  s.F = temps.token * (row_max.array() + sums.array().log() - log_k);
  s.w = frame_weights(s.F, temps.frame);
  s.R = s.w.dot(s.F);
  return s;
}

}  // namespace

Vector frame_scores(const Matrix& program, const Matrix& text, double lambda_tok) {
  const Matrix scaled = (program * text.transpose()) / lambda_tok;
  const Vector row_max = scaled.rowwise().maxCoeff();
  const Vector sums = (scaled.colwise() - row_max).array().exp().rowwise().sum();
  const double log_k = std::log(static_cast<double>(text.rows()));
  return lambda_tok * (row_max.array() + sums.array().log() - log_k);
}

Vector frame_weights(const Vector& scores, double lambda_frm) {
  Vector w = ((scores.array() - scores.maxCoeff()) / lambda_frm).exp();
  return w / w.sum();
}

Matrix similarity_matrix(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                         MatchTemperatures temps, Exec exec) {
  check_batch(programs, texts, temps);
  const auto B_m = static_cast<Index>(programs.size());
  const auto B_y = static_cast<Index>(texts.size());
  Matrix R(B_m, B_y);
  parallel_for(B_m * B_y, exec, [&](std::ptrdiff_t ij) {
    const Index i = ij / B_y;
    const Index j = ij % B_y;
    R(i, j) = pair_scores(programs[static_cast<std::size_t>(i)], texts[static_cast<std::size_t>(j)], temps).R;
  });
  return R;
}

Matrix similarity_matrix_reference(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                                   MatchTemperatures temps) {
  check_batch(programs, texts, temps);
  Matrix R(static_cast<Index>(programs.size()), static_cast<Index>(texts.size()));
  for (std::size_t i = 0; i < programs.size(); ++i)
    for (std::size_t j = 0; j < texts.size(); ++j) {
      const Matrix& p = programs[i];
      const Matrix& y = texts[j];
      Vector F(p.rows());
      for (Index t = 0; t < p.rows(); ++t) {
        double hi = -1e300;
        for (Index k = 0; k < y.rows(); ++k) hi = std::max(hi, p.row(t).dot(y.row(k)) / temps.token);
        double acc = 0.0;
        for (Index k = 0; k < y.rows(); ++k) acc += std::exp(p.row(t).dot(y.row(k)) / temps.token - hi);
        F(t) = temps.token * (hi + std::log(acc / static_cast<double>(y.rows())));
      }
      const Vector w = frame_weights(F, temps.frame);
      R(static_cast<Index>(i), static_cast<Index>(j)) = w.dot(F);
    }
  return R;
}

SimilarityGrad similarity_backward(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                                   MatchTemperatures temps, const Matrix& dR, Exec exec) {
  check_batch(programs, texts, temps);
  require(dR.rows() == static_cast<Index>(programs.size()) && dR.cols() == static_cast<Index>(texts.size()),
          ErrorKind::ShapeMismatch, "dR shape");

  // dC_tk for one pair, where C = program * text^T.
  auto pair_grad = [&](std::size_t i, std::size_t j) -> Matrix {
    const PairScores s = pair_scores(programs[i], texts[j], temps);
    const double g = dR(static_cast<Index>(i), static_cast<Index>(j));
    const Vector dF = g * (s.w.array() * (1.0 + (s.F.array() - s.R) / temps.frame)).matrix();
    return s.token_weights.array().colwise() * dF.array();
  };

  SimilarityGrad out;
  out.d_programs.resize(programs.size());
  out.d_texts.resize(texts.size());
  // Two passes keep every output written by exactly one iteration.
  parallel_for(static_cast<std::ptrdiff_t>(programs.size()), exec, [&](std::ptrdiff_t i) {
    const auto ui = static_cast<std::size_t>(i);
    Matrix acc = Matrix::Zero(programs[ui].rows(), programs[ui].cols());
    for (std::size_t j = 0; j < texts.size(); ++j) acc.noalias() += pair_grad(ui, j) * texts[j];
    out.d_programs[ui] = std::move(acc);
  });
  parallel_for(static_cast<std::ptrdiff_t>(texts.size()), exec, [&](std::ptrdiff_t j) {
    const auto uj = static_cast<std::size_t>(j);
    Matrix acc = Matrix::Zero(texts[uj].rows(), texts[uj].cols());
    for (std::size_t i = 0; i < programs.size(); ++i) acc.noalias() += pair_grad(i, uj).transpose() * programs[i];
    out.d_texts[uj] = std::move(acc);
  });
  return out;
}

double contrastive_loss(const Matrix& R, double gamma) { return contrastive_loss_and_grad(R, gamma).loss; }

ContrastiveGrad contrastive_loss_and_grad(const Matrix& R, double gamma) {
  require(R.rows() == R.cols(), ErrorKind::ShapeMismatch, "contrastive loss needs a square similarity matrix");
  require(R.rows() >= 2, ErrorKind::DegenerateBatch, "contrastive loss needs at least two pairs");
  require(gamma > 0.0, ErrorKind::RangeError, "logit scale must be positive");
  const Index B = R.rows();
  const Matrix logits = gamma * R;

  Matrix p_row(B, B), p_col(B, B);
  double loss_m2y = 0.0, loss_y2m = 0.0;
  for (Index i = 0; i < B; ++i) {
    const double hi = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - hi).exp();
    const double lse = hi + std::log(e.sum());
    p_row.row(i) = e / e.sum();
    loss_m2y += lse - logits(i, i);
  }
  for (Index j = 0; j < B; ++j) {
    const double hi = logits.col(j).maxCoeff();
    const Vector e = (logits.col(j).array() - hi).exp();
    const double lse = hi + std::log(e.sum());
    p_col.col(j) = e / e.sum();
    loss_y2m += lse - logits(j, j);
  }
  ContrastiveGrad out;
  out.loss = 0.5 * (loss_m2y + loss_y2m) / static_cast<double>(B);
  // dL/dlogits = (P_row + P_col - 2 I) / (2B)
  const Matrix d_logits = (p_row + p_col - 2.0 * Matrix::Identity(B, B)) / (2.0 * static_cast<double>(B));
  out.dR = gamma * d_logits;
  out.d_log_gamma = (d_logits.array() * logits.array()).sum();
  return out;
}

Matrix normalize_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    require(n > 0.0, ErrorKind::ZeroNormInput, "cannot normalize a zero row");
    y.row(r) = x.row(r) / n;
  }
  return y;
}

Matrix normalize_rows_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    const Eigen::RowVectorXd y = x.row(r) / n;
    dx.row(r) = (dy.row(r) - y.dot(dy.row(r)) * y) / n;
  }
  return dx;
}

}  // namespace behave
