#include "behave/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "behave/errors.hpp"

namespace behave {

std::vector<int> assign_clauses(const std::vector<Vector>& segments, const std::vector<Vector>& clauses) {
  require(!clauses.empty(), ErrorKind::CountMismatch, "no clauses");
  std::vector<int> out;
  for (const Vector& s : segments) {
    int best = 0;
    double best_sim = -INFINITY;
    for (std::size_t c = 0; c < clauses.size(); ++c) {
      require(clauses[c].size() == s.size(), ErrorKind::DimensionMismatch, "embedding widths differ");
      const double sim = s.dot(clauses[c]);
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<int>(c);
      }
    }
    out.push_back(best);
  }
  return out;
}

double order_accuracy(const std::vector<Vector>& segments, const std::vector<Vector>& clauses) {
  if (segments.size() != clauses.size())
    fail(ErrorKind::CountMismatch, std::to_string(segments.size()) + " segments for " +
                                       std::to_string(clauses.size()) + " clauses");
  const auto assigned = assign_clauses(segments, clauses);
  for (std::size_t n = 0; n < assigned.size(); ++n)
    if (assigned[n] != static_cast<int>(n)) return 0.0;
  return 1.0;
}

double transition_score(const StateTrajectory& states, const std::vector<Index>& boundaries) {
  if (boundaries.empty()) fail(ErrorKind::BoundaryOutOfRange, "transition score needs at least one boundary");
  double sum = 0.0;
  for (Index i : boundaries) {
    if (i < 1 || i + 1 >= states.rows())
      fail(ErrorKind::BoundaryOutOfRange, "boundary " + std::to_string(i) + " outside [1, " +
                                              std::to_string(states.rows() - 2) + "]");
    const Eigen::RowVectorXd v_next = states.row(i + 1) - states.row(i);
    const Eigen::RowVectorXd v_here = states.row(i) - states.row(i - 1);
    sum += v_next.norm() + (v_next - v_here).norm();
  }
  return sum / static_cast<double>(boundaries.size());
}

namespace {

std::map<int, double> top_k_from(const Matrix& sims, const std::vector<int>& k_list) {
  const Index B = sims.rows();
  std::vector<Index> rank(static_cast<std::size_t>(B), 0);
  for (Index i = 0; i < B; ++i) {
    Index r = 0;
    for (Index j = 0; j < B; ++j) {
      if (j == i) continue;
      if (sims(i, j) > sims(i, i) || (sims(i, j) == sims(i, i) && j < i)) ++r;
    }
    rank[static_cast<std::size_t>(i)] = r;
  }
  std::map<int, double> out;
  for (int k : k_list) {
    require(k >= 1, ErrorKind::RangeError, "top-k needs k >= 1");
    Index hits = 0;
    for (Index r : rank) hits += r < k ? 1 : 0;
    out[k] = static_cast<double>(hits) / static_cast<double>(B);
  }
  return out;
}

}  // namespace

RetrievalResult retrieval_metrics(const Matrix& program_embs, const Matrix& text_embs, const std::vector<int>& k_list) {
  if (program_embs.rows() != text_embs.rows())
    fail(ErrorKind::CountMismatch, "retrieval needs as many texts as programs");
  require(program_embs.cols() == text_embs.cols(), ErrorKind::DimensionMismatch, "embedding widths differ");
  const Index B = program_embs.rows();
  require(B >= 1, ErrorKind::CountMismatch, "empty retrieval batch");
  RetrievalResult out;
  out.top_k = top_k_from(program_embs * text_embs.transpose(), k_list);
  double dist = 0.0;
  for (Index i = 0; i < B; ++i) dist += (program_embs.row(i) - text_embs.row(i)).norm();
  out.mm_dist = dist / static_cast<double>(B);
  return out;
}

RetrievalResult retrieval_from_scores(const Matrix& scores, const std::vector<int>& k_list) {
  require(scores.rows() >= 1, ErrorKind::CountMismatch, "empty retrieval batch");
  if (scores.rows() != scores.cols()) fail(ErrorKind::CountMismatch, "retrieval needs as many texts as programs");
  RetrievalResult out;
  out.top_k = top_k_from(scores, k_list);
  return out;
}

double diversity(const std::vector<Matrix>& samples) {
  if (samples.size() < 2) fail(ErrorKind::TooFewSamples, "diversity needs at least two samples");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < samples.size(); ++a)
    for (std::size_t b = a + 1; b < samples.size(); ++b) {
      require(samples[a].rows() == samples[b].rows() && samples[a].cols() == samples[b].cols(),
              ErrorKind::ShapeMismatch, "samples differ in shape");
      sum += (samples[a] - samples[b]).norm();
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

namespace {

std::pair<Vector, Matrix> moments(const Matrix& x) {
  require(x.rows() >= 2, ErrorKind::TooFewSamples, "moments need at least two rows");
  const Vector mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  return {mean, centered.transpose() * centered / static_cast<double>(x.rows() - 1)};
}

}  // namespace

double moment_gap(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorKind::DimensionMismatch, "moment gap needs equal widths");
  const auto [ma, ca] = moments(a);
  const auto [mb, cb] = moments(b);
  return (ma - mb).norm() + (ca - cb).norm();
}

double sign_test_p(int wins, int losses) {
  require(wins >= 0 && losses >= 0, ErrorKind::RangeError, "counts must be non-negative");
  const int n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

Json EvalReport::to_json() const {
  Json top = Json::object();
  for (const auto& [k, v] : retrieval_top_k) top["top" + std::to_string(k)] = v;
  return Json{{"order_accuracy", order_accuracy}, {"transition", transition}, {"action_kl", action_kl},
              {"recon_mse", recon_mse},           {"retrieval", top},         {"mm_dist", mm_dist},
              {"diversity", diversity},           {"moment_gap", moment_gap}, {"n_samples", n_samples}};
}

std::string EvalReport::csv_header() const {
  std::string h = "order_accuracy,transition,action_kl,recon_mse";
  for (const auto& kv : retrieval_top_k) h += ",top" + std::to_string(kv.first);
  return h + ",mm_dist,diversity,moment_gap,n_samples";
}

std::string EvalReport::csv_row() const {
  auto f = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string r = f(order_accuracy) + "," + f(transition) + "," + f(action_kl) + "," + f(recon_mse);
  for (const auto& kv : retrieval_top_k) r += "," + f(kv.second);
  return r + "," + f(mm_dist) + "," + f(diversity) + "," + f(moment_gap) + "," + std::to_string(n_samples);
}

}  // namespace behave
