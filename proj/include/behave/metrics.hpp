#pragma once

#include <map>
#include <string>
#include <vector>

#include "behave/json_io.hpp"
#include "behave/types.hpp"

namespace behave {

/// Clause index assigned to each segment: argmax cosine, ties to the lower index.
std::vector<int> assign_clauses(const std::vector<Vector>& segments, const std::vector<Vector>& clauses);

/// 1 when segment n is matched to clause n for every n, else 0.
double order_accuracy(const std::vector<Vector>& segments, const std::vector<Vector>& clauses);

/// (1 / #boundaries) sum_i ||s_{i+1} - s_i|| + ||v_{i+1} - v_i||, v_i = s_i - s_{i-1},
/// at state indices i (each needs 1 <= i <= rows - 2).
double transition_score(const StateTrajectory& states, const std::vector<Index>& boundaries);

struct RetrievalResult {
  std::map<int, double> top_k;
  double mm_dist = 0.0;
};

/// Row i of each matrix is a pair. A program's rank counts texts with a higher
/// cosine plus equal-cosine texts at a lower index.
RetrievalResult retrieval_metrics(const Matrix& program_embs, const Matrix& text_embs, const std::vector<int>& k_list);

/// Same ranking over an arbitrary score matrix (rows programs, columns texts).
/// mm_dist is left at 0.
RetrievalResult retrieval_from_scores(const Matrix& scores, const std::vector<int>& k_list);

/// Mean pairwise Euclidean distance between flattened programs.
double diversity(const std::vector<Matrix>& samples);

/// ||mean_a - mean_b|| + ||cov_a - cov_b||_F over rows. Not comparable to FID.
double moment_gap(const Matrix& a, const Matrix& b);

/// One-sided exact binomial p-value P(X >= wins) for X ~ Bin(wins + losses, 1/2).
double sign_test_p(int wins, int losses);

struct EvalReport {
  double order_accuracy = 0.0;
  double transition = 0.0;
  double action_kl = 0.0;
  double recon_mse = 0.0;
  std::map<int, double> retrieval_top_k;
  double mm_dist = 0.0;
  double diversity = 0.0;
  double moment_gap = 0.0;
  int n_samples = 0;

  Json to_json() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

}  // namespace behave
