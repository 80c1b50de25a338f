#include <doctest.h>

#include <cmath>
#include <sstream>

#include "behave/errors.hpp"
#include "behave/metrics.hpp"

using namespace behave;

namespace {

ErrorKind kind_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::FormatError;
}

Vector unit(Vector v) { return v / v.norm(); }

Matrix random_rotation(Index d, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(d, d, rng));
  return qr.householderQ();
}

Matrix unit_rows(Matrix m) {
  m.rowwise().normalize();
  return m;
}

int count_fields(const std::string& line) {
  int n = 1;
  for (char c : line) n += c == ',';
  return n;
}

}  // namespace

TEST_CASE("order accuracy examples") {
  Rng rng(1);
  std::vector<Vector> clauses;
  for (int n = 0; n < 3; ++n) clauses.push_back(unit(gaussian_vector(6, rng)));
  CHECK(order_accuracy(clauses, clauses) == 1.0);
  CHECK(order_accuracy({clauses[1], clauses[0], clauses[2]}, clauses) == 0.0);
  CHECK(order_accuracy({clauses[0], clauses[0], clauses[2]}, clauses) == 0.0);
  CHECK(assign_clauses({clauses[2], clauses[0]}, clauses) == std::vector<int>{2, 0});
  // A segment equidistant from two clauses goes to the lower index.
  const Vector e0 = (Vector(2) << 1, 0).finished(), e1 = (Vector(2) << 0, 1).finished();
  CHECK(assign_clauses({unit(e0 + e1)}, {e1, e0}) == std::vector<int>{0});
  CHECK(assign_clauses({unit(e0 + e1)}, {e0, e1}) == std::vector<int>{0});
  CHECK(kind_of([&] { order_accuracy({clauses[0]}, clauses); }) == ErrorKind::CountMismatch);
  CHECK(kind_of([&] { assign_clauses({clauses[0]}, {}); }) == ErrorKind::CountMismatch);
  CHECK(kind_of([&] { assign_clauses({Vector::Ones(3)}, clauses); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("order accuracy is rotation invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int N = uniform_int(rng, 1, 5);
    std::vector<Vector> seg, cl, seg_r, cl_r;
    const Matrix Q = random_rotation(5, rng);
    for (int n = 0; n < N; ++n) {
      cl.push_back(unit(gaussian_vector(5, rng)));
      // Noisy copies so both outcomes occur.
      seg.push_back(unit(cl.back() + gaussian_vector(5, rng, 0.8)));
      cl_r.push_back(Q * cl.back());
      seg_r.push_back(Q * seg.back());
    }
    CHECK(assign_clauses(seg, cl) == assign_clauses(seg_r, cl_r));
    CHECK(order_accuracy(seg, cl) == order_accuracy(seg_r, cl_r));
  }
}

TEST_CASE("random segments match the identity order at the independent-argmax rate") {
  // Clauses on the coordinate axes and isotropic segments: each segment picks
  // each clause with probability exactly 1/3, independently, so P = 1/27.
  const std::vector<Vector> clauses{Vector::Unit(3, 0), Vector::Unit(3, 1), Vector::Unit(3, 2)};
  Rng rng(3);
  const int trials = 100000;
  double hits = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<Vector> seg;
    for (int n = 0; n < 3; ++n) seg.push_back(unit(gaussian_vector(3, rng)));
    hits += order_accuracy(seg, clauses);
  }
  const double p = 1.0 / 27.0;
  CHECK(std::abs(hits / trials - p) <= 4 * std::sqrt(p * (1 - p) / trials));
}

TEST_CASE("transition score examples") {
  const StateTrajectory flat = Matrix::Constant(6, 3, 1.5);
  CHECK(transition_score(flat, {1, 2, 4}) == 0.0);

  StateTrajectory s(4, 2);
  s << 0, 0, 1, 0, 1, 1, 1, 1;
  // i = 1: ||s2 - s1|| = 1, v2 - v1 = (0,1) - (1,0), norm sqrt 2.
  CHECK(transition_score(s, {1}) == doctest::Approx(1.0 + std::sqrt(2.0)).epsilon(1e-15));
  // i = 2: ||s3 - s2|| = 0, v3 - v2 = 0 - (0,1), norm 1.
  CHECK(transition_score(s, {2}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(transition_score(s, {1, 2}) == doctest::Approx((2.0 + std::sqrt(2.0)) / 2).epsilon(1e-15));

  CHECK(kind_of([&] { transition_score(s, {}); }) == ErrorKind::BoundaryOutOfRange);
  CHECK(kind_of([&] { transition_score(s, {0}); }) == ErrorKind::BoundaryOutOfRange);
  CHECK(kind_of([&] { transition_score(s, {3}); }) == ErrorKind::BoundaryOutOfRange);
}

TEST_CASE("transition score is translation invariant and scales linearly") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Index T = uniform_int(rng, 3, 20);
    const StateTrajectory s = gaussian_matrix(T, 4, rng);
    std::vector<Index> b;
    for (int k = 0; k < uniform_int(rng, 1, 3); ++k) b.push_back(uniform_int(rng, 1, static_cast<int>(T) - 2));
    const double base = transition_score(s, b);
    const StateTrajectory shifted = s.rowwise() + gaussian_vector(4, rng, 10.0).transpose();
    const double scale = uniform(rng, 0.1, 10.0);
    CHECK(transition_score(shifted, b) == doctest::Approx(base).epsilon(1e-10));
    CHECK(transition_score(scale * s, b) == doctest::Approx(scale * base).epsilon(1e-12));
  }
}

TEST_CASE("retrieval examples") {
  Rng rng(5);
  const Matrix e = unit_rows(gaussian_matrix(10, 6, rng));
  const RetrievalResult aligned = retrieval_metrics(e, e, {1, 5});
  CHECK(aligned.top_k.at(1) == 1.0);
  CHECK(aligned.top_k.at(5) == 1.0);
  CHECK(aligned.mm_dist == 0.0);

  // All texts identical: program i is outranked by the i lower-indexed ties.
  const Matrix same = Vector::Unit(6, 0).transpose().replicate(10, 1);
  const RetrievalResult ties = retrieval_metrics(e, same, {1, 3, 10, 20});
  CHECK(ties.top_k.at(1) == doctest::Approx(0.1));
  CHECK(ties.top_k.at(3) == doctest::Approx(0.3));
  CHECK(ties.top_k.at(10) == 1.0);
  CHECK(ties.top_k.at(20) == 1.0);

  const Matrix x = (Matrix(2, 2) << 1, 0, 0, 1).finished();
  const Matrix y = (Matrix(2, 2) << 0, 1, 1, 0).finished();
  const RetrievalResult swapped = retrieval_metrics(x, y, {1, 2});
  CHECK(swapped.top_k.at(1) == 0.0);
  CHECK(swapped.top_k.at(2) == 1.0);
  CHECK(swapped.mm_dist == doctest::Approx(std::sqrt(2.0)));

  CHECK(kind_of([&] { retrieval_metrics(e, e.topRows(4), {1}); }) == ErrorKind::CountMismatch);
  CHECK(kind_of([&] { retrieval_metrics(e, e, {0}); }) == ErrorKind::RangeError);
  CHECK(kind_of([&] { retrieval_from_scores(gaussian_matrix(3, 4, rng), {1}); }) == ErrorKind::CountMismatch);
}

TEST_CASE("random retrieval scores chance and top-k is monotone") {
  Rng rng(6);
  const int trials = 2000;
  double top1 = 0.0, top1_sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Matrix p = unit_rows(gaussian_matrix(32, 8, rng));
    const Matrix y = unit_rows(gaussian_matrix(32, 8, rng));
    const RetrievalResult r = retrieval_metrics(p, y, {1, 2, 5, 10, 32});
    top1 += r.top_k.at(1);
    top1_sq += r.top_k.at(1) * r.top_k.at(1);
    double prev = 0.0;
    for (const auto& [k, v] : r.top_k) {
      CHECK(v >= prev);
      prev = v;
    }
    CHECK(r.top_k.at(32) == 1.0);
  }
  const double mean = top1 / trials;
  const double se = std::sqrt((top1_sq / trials - mean * mean) / trials);
  CHECK(std::abs(mean - 1.0 / 32) <= 4 * se);
}

TEST_CASE("score-matrix retrieval agrees with cosine retrieval") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix p = unit_rows(gaussian_matrix(12, 5, rng));
    const Matrix y = unit_rows(p + gaussian_matrix(12, 5, rng, 0.7));
    const RetrievalResult a = retrieval_metrics(p, y, {1, 3});
    const RetrievalResult b = retrieval_from_scores(p * y.transpose(), {1, 3});
    CHECK(a.top_k == b.top_k);
    CHECK(b.mm_dist == 0.0);
  }
  // Ranking only depends on order within a row.
  const Matrix s = gaussian_matrix(9, 9, rng);
  const Matrix monotone = (s.array() * 3.0 + 2.0).exp().matrix();
  CHECK(retrieval_from_scores(s, {1, 2}).top_k == retrieval_from_scores(monotone, {1, 2}).top_k);
}

TEST_CASE("diversity examples") {
  const Matrix a = Matrix::Ones(3, 2);
  CHECK(diversity({a, a, a}) == 0.0);
  Matrix b = a;
  b(1, 1) += 3.0;
  b(2, 0) -= 4.0;
  CHECK(diversity({a, b}) == doctest::Approx(5.0));
  CHECK(kind_of([&] { diversity({a}); }) == ErrorKind::TooFewSamples);
  CHECK(kind_of([&] { diversity({a, Matrix::Ones(2, 3)}); }) == ErrorKind::ShapeMismatch);

  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = uniform_int(rng, 2, 9);
    std::vector<Matrix> s;
    for (int i = 0; i < k; ++i) s.push_back(gaussian_matrix(4, 3, rng));
    double sum = 0.0;
    int pairs = 0;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        if (i == j) continue;
        double sq = 0.0;
        for (Index r = 0; r < 4; ++r)
          for (Index c = 0; c < 3; ++c) sq += std::pow(s[i](r, c) - s[j](r, c), 2);
        sum += std::sqrt(sq);
        ++pairs;
      }
    CHECK(diversity(s) == doctest::Approx(sum / pairs).epsilon(1e-12));
  }
}

TEST_CASE("moment gap") {
  Rng rng(9);
  const Matrix a = gaussian_matrix(50, 3, rng);
  CHECK(moment_gap(a, a) == 0.0);
  const Vector c = (Vector(3) << 3.0, 0.0, -4.0).finished();
  CHECK(moment_gap(a, a.rowwise() + c.transpose()) == doctest::Approx(5.0).epsilon(1e-10));
  // Doubling the spread about the mean quadruples the covariance.
  const Matrix centered = a.rowwise() - a.colwise().mean();
  Matrix cov = Matrix::Zero(3, 3);
  for (Index r = 0; r < 50; ++r) cov += centered.row(r).transpose() * centered.row(r);
  cov /= 49.0;
  CHECK(moment_gap(centered, 2.0 * centered) == doctest::Approx((3.0 * cov).norm()).epsilon(1e-10));
  CHECK(kind_of([&] { moment_gap(a, gaussian_matrix(5, 2, rng)); }) == ErrorKind::DimensionMismatch);
  CHECK(kind_of([&] { moment_gap(a, a.topRows(1)); }) == ErrorKind::TooFewSamples);
}

TEST_CASE("sign test p-values") {
  CHECK(sign_test_p(0, 0) == 1.0);
  CHECK(sign_test_p(5, 0) == doctest::Approx(1.0 / 32).epsilon(1e-12));
  CHECK(sign_test_p(3, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sign_test_p(0, 7) == doctest::Approx(1.0));
  CHECK(sign_test_p(9, 1) == doctest::Approx(11.0 / 1024).epsilon(1e-12));
  double prev = 1.1;
  for (int w = 0; w <= 20; ++w) {
    const double p = sign_test_p(w, 20 - w);
    CHECK(p < prev);
    prev = p;
  }
  CHECK(sign_test_p(84, 36) < 1e-4);
  CHECK(kind_of([] { sign_test_p(-1, 3); }) == ErrorKind::RangeError);
}

TEST_CASE("report serialisation") {
  EvalReport r;
  r.order_accuracy = 0.5;
  r.retrieval_top_k = {{1, 0.25}, {5, 0.75}};
  r.n_samples = 12;
  const Json j = r.to_json();
  CHECK(j.at("order_accuracy").get<double>() == 0.5);
  CHECK(j.at("retrieval").at("top5").get<double>() == 0.75);
  CHECK(j.at("n_samples").get<int>() == 12);
  CHECK(count_fields(r.csv_header()) == count_fields(r.csv_row()));
  CHECK(r.csv_header().find("top5") != std::string::npos);
  std::istringstream row(r.csv_row());
  std::string first;
  std::getline(row, first, ',');
  CHECK(std::stod(first) == 0.5);
}
