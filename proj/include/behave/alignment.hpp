#pragma once

#include <vector>

#include "behave/types.hpp"

namespace behave {

/// Temperatures of the frame-token matching score.
struct MatchTemperatures {
  double token = 0.1;  // sharpness of pooling over text tokens
  double frame = 0.1;  // concentration of the frame weights
};

/// Frame scores F_t = lambda_tok * log( (1/K) sum_k exp(p_t . y_k / lambda_tok) )
/// for one program [T_m x d_e] against one text [K x d_e].
Vector frame_scores(const Matrix& program, const Matrix& text, double lambda_tok);

/// softmax_t(F_t / lambda_frm).
Vector frame_weights(const Vector& scores, double lambda_frm);

/// Batch similarity R_ij = sum_t w_ijt F_ijt between unit-normalized program
/// frames and unit-normalized text tokens. Rows index programs, columns texts.
/// Throws NonUnitInput if any vector's norm is off by more than 1e-6.
Matrix similarity_matrix(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                         MatchTemperatures temps, Exec exec = Exec::Parallel);

/// Straight-line serial implementation of similarity_matrix.
Matrix similarity_matrix_reference(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                                   MatchTemperatures temps);

struct SimilarityGrad {
  std::vector<Matrix> d_programs;
  std::vector<Matrix> d_texts;
};

/// Pulls dL/dR back to the normalized program frames and text tokens.
SimilarityGrad similarity_backward(const std::vector<Matrix>& programs, const std::vector<Matrix>& texts,
                                   MatchTemperatures temps, const Matrix& dR, Exec exec = Exec::Parallel);

/// 0.5 * (L_{m->Y} + L_{Y->m}) with logits gamma * R.
double contrastive_loss(const Matrix& R, double gamma);

struct ContrastiveGrad {
  double loss = 0.0;
  Matrix dR;
  /// dL/d(log gamma).
  double d_log_gamma = 0.0;
};

ContrastiveGrad contrastive_loss_and_grad(const Matrix& R, double gamma);

/// Row-wise normalization and its backward pass.
Matrix normalize_rows(const Matrix& x);
Matrix normalize_rows_backward(const Matrix& x, const Matrix& dy);

}  // namespace behave
