#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "behave/alignment.hpp"
#include "behave/errors.hpp"

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

Matrix unit_rows(Index rows, Index cols, Rng& rng) {
  Matrix m = gaussian_matrix(rows, cols, rng);
  for (Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).norm();
  return m;
}

struct RandomBatch {
  std::vector<Matrix> programs, texts;
};

RandomBatch random_batch(Index B, Index d, Rng& rng, int max_frames = 4, int max_tokens = 5) {
  RandomBatch b;
  for (Index i = 0; i < B; ++i) {
    b.programs.push_back(unit_rows(uniform_int(rng, 1, max_frames), d, rng));
    b.texts.push_back(unit_rows(uniform_int(rng, 1, max_tokens), d, rng));
  }
  return b;
}

// Four nested loops over (i, j, t, k), written from the formula alone.
Matrix naive_similarity(const std::vector<Matrix>& P, const std::vector<Matrix>& Y, double tok, double frm) {
  Matrix R(static_cast<Index>(P.size()), static_cast<Index>(Y.size()));
  for (std::size_t i = 0; i < P.size(); ++i)
    for (std::size_t j = 0; j < Y.size(); ++j) {
      std::vector<double> F;
      for (Index t = 0; t < P[i].rows(); ++t) {
        double acc = 0.0;
        for (Index k = 0; k < Y[j].rows(); ++k) {
          double dot = 0.0;
          for (Index c = 0; c < P[i].cols(); ++c) dot += P[i](t, c) * Y[j](k, c);
          acc += std::exp(dot / tok);
        }
        F.push_back(tok * std::log(acc / static_cast<double>(Y[j].rows())));
      }
      double z = 0.0;
      for (double f : F) z += std::exp(f / frm);
      double r = 0.0;
      for (double f : F) r += std::exp(f / frm) / z * f;
      R(static_cast<Index>(i), static_cast<Index>(j)) = r;
    }
  return R;
}

double naive_contrastive(const Matrix& R, double gamma) {
  const Index B = R.rows();
  double rows = 0.0, cols = 0.0;
  for (Index i = 0; i < B; ++i) {
    double s = 0.0;
    for (Index j = 0; j < B; ++j) s += std::exp(gamma * R(i, j));
    rows += -std::log(std::exp(gamma * R(i, i)) / s);
  }
  for (Index j = 0; j < B; ++j) {
    double s = 0.0;
    for (Index i = 0; i < B; ++i) s += std::exp(gamma * R(i, j));
    cols += -std::log(std::exp(gamma * R(j, j)) / s);
  }
  return 0.5 * (rows / double(B) + cols / double(B));
}

}  // namespace

TEST_CASE("one program frame takes all the weight") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = unit_rows(1, 5, rng);
    const Matrix y = unit_rows(uniform_int(rng, 1, 5), 5, rng);
    const Matrix R = similarity_matrix({p}, {y}, {0.3, 0.2});
    CHECK(R(0, 0) == doctest::Approx(frame_scores(p, y, 0.3)(0)).epsilon(1e-14));
  }
}

TEST_CASE("identical unit vectors give similarity one") {
  Vector v(3);
  v << 0.6, 0.0, 0.8;
  for (int K : {1, 3, 6}) {
    const Matrix y = v.transpose().replicate(K, 1);
    const Matrix p = v.transpose().replicate(4, 1);
    const Matrix R = similarity_matrix({p}, {y}, {0.1, 0.1});
    CHECK(R(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("similarity matrix matches a four-loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const Index B = uniform_int(rng, 1, 8);
    const RandomBatch b = random_batch(B, uniform_int(rng, 2, 6), rng);
    const double tok = uniform(rng, 0.05, 3.0), frm = uniform(rng, 0.05, 3.0);
    const Matrix R = similarity_matrix(b.programs, b.texts, {tok, frm});
    const Matrix oracle = naive_similarity(b.programs, b.texts, tok, frm);
    CHECK((R - oracle).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(R.maxCoeff() <= 1.0 + 1e-12);
    CHECK(R.minCoeff() >= -1.0 - 1e-12);
  }
}

TEST_CASE("serial and parallel similarity agree bitwise and match the reference kernel") {
  Rng rng(3);
  const RandomBatch b = random_batch(16, 8, rng);
  const MatchTemperatures t{0.5, 0.7};
  const Matrix serial = similarity_matrix(b.programs, b.texts, t, Exec::Serial);
  CHECK(similarity_matrix(b.programs, b.texts, t, Exec::Parallel) == serial);
  CHECK((similarity_matrix_reference(b.programs, b.texts, t) - serial).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("frame scores are bounded by the best token") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix p = unit_rows(3, 4, rng), y = unit_rows(uniform_int(rng, 1, 5), 4, rng);
    const double tok = uniform(rng, 0.05, 2.0);
    const Vector F = frame_scores(p, y, tok);
    const Matrix cos = p * y.transpose();
    for (Index t = 0; t < 3; ++t) {
      CHECK(F(t) <= cos.row(t).maxCoeff() + 1e-12);
      CHECK(F(t) >= cos.row(t).mean() - 1e-12);
    }
    const Vector w = frame_weights(F, uniform(rng, 0.05, 2.0));
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(w.minCoeff() > 0.0);
  }
}

TEST_CASE("duplicating every token leaves the similarity unchanged") {
  Rng rng(5);
  const RandomBatch b = random_batch(5, 6, rng);
  std::vector<Matrix> doubled;
  for (const auto& y : b.texts) {
    Matrix d(2 * y.rows(), y.cols());
    d << y, y;
    doubled.push_back(d);
  }
  const MatchTemperatures t{0.2, 0.4};
  CHECK((similarity_matrix(b.programs, doubled, t) - similarity_matrix(b.programs, b.texts, t)).cwiseAbs().maxCoeff() <=
        1e-13);
}

TEST_CASE("token order within a text and batch order are irrelevant") {
  Rng rng(6);
  const RandomBatch b = random_batch(6, 5, rng, 4, 5);
  const MatchTemperatures t{0.3, 0.3};
  const Matrix R = similarity_matrix(b.programs, b.texts, t);

  std::vector<Matrix> reversed;
  for (const auto& y : b.texts) reversed.push_back(y.colwise().reverse());
  CHECK((similarity_matrix(b.programs, reversed, t) - R).cwiseAbs().maxCoeff() <= 1e-13);

  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<Matrix> P, Y;
  for (std::size_t i : perm) {
    P.push_back(b.programs[i]);
    Y.push_back(b.texts[i]);
  }
  const Matrix Rp = similarity_matrix(P, Y, t);
  for (std::size_t a = 0; a < perm.size(); ++a)
    for (std::size_t c = 0; c < perm.size(); ++c)
      CHECK(Rp(Index(a), Index(c)) == R(Index(perm[a]), Index(perm[c])));
}

TEST_CASE("similarity rejects bad inputs") {
  Rng rng(7);
  const RandomBatch b = random_batch(2, 3, rng);
  std::vector<Matrix> off = b.programs;
  off[1](0, 0) += 1e-3;
  CHECK(kind_of([&] { similarity_matrix(off, b.texts, {0.1, 0.1}); }) == ErrorKind::NonUnitInput);
  CHECK(kind_of([&] { similarity_matrix(b.programs, {Matrix::Identity(2, 2)}, {0.1, 0.1}); }) ==
        ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { similarity_matrix(b.programs, b.texts, {0.0, 0.1}); }) == ErrorKind::RangeError);
  CHECK(kind_of([&] { similarity_matrix({}, b.texts, {0.1, 0.1}); }) == ErrorKind::DegenerateBatch);
}

TEST_CASE("contrastive loss examples") {
  CHECK(contrastive_loss(Matrix::Identity(4, 4) * 200.0, 1.0) < 1e-12);
  for (int B : {2, 5, 32}) CHECK(contrastive_loss(Matrix::Constant(B, B, 0.3), 2.0) == doctest::Approx(std::log(B)));
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix R = gaussian_matrix(4, 4, rng);
    const double g = uniform(rng, 0.5, 10.0);
    CHECK(std::abs(contrastive_loss(R, g) - naive_contrastive(R, g)) <= 1e-12);
  }
  CHECK(kind_of([] { contrastive_loss(Matrix::Ones(1, 1), 1.0); }) == ErrorKind::DegenerateBatch);
  CHECK(kind_of([] { contrastive_loss(Matrix::Ones(2, 2), 0.0); }) == ErrorKind::RangeError);
  CHECK(kind_of([] { contrastive_loss(Matrix::Ones(2, 3), 1.0); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("a dominant diagonal lowers the contrastive loss") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix R = gaussian_matrix(6, 6, rng) * 0.1;
    Matrix better = R;
    better.diagonal().array() += 0.5;
    CHECK(contrastive_loss(better, 3.0) < contrastive_loss(R, 3.0));
  }
}

TEST_CASE("contrastive gradients match central differences") {
  Rng rng(10);
  const Matrix R = gaussian_matrix(5, 5, rng) * 0.5;
  const double g = 2.5;
  const ContrastiveGrad cg = contrastive_loss_and_grad(R, g);
  CHECK(cg.loss == contrastive_loss(R, g));
  const double h = 1e-6;
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) {
      Matrix a = R, b = R;
      a(i, j) += h;
      b(i, j) -= h;
      const double fd = (contrastive_loss(a, g) - contrastive_loss(b, g)) / (2 * h);
      CHECK(std::abs(fd - cg.dR(i, j)) <= 1e-7);
    }
  const double fd = (contrastive_loss(R, g * std::exp(h)) - contrastive_loss(R, g * std::exp(-h))) / (2 * h);
  CHECK(std::abs(fd - cg.d_log_gamma) <= 1e-7);
}

TEST_CASE("similarity backward matches central differences through normalization") {
  Rng rng(11);
  const Index B = 3, d = 4;
  std::vector<Matrix> raw_p, raw_y;
  for (Index i = 0; i < B; ++i) {
    raw_p.push_back(gaussian_matrix(uniform_int(rng, 1, 3), d, rng));
    raw_y.push_back(gaussian_matrix(uniform_int(rng, 1, 4), d, rng));
  }
  const Matrix dR = gaussian_matrix(B, B, rng);
  const MatchTemperatures t{0.4, 0.6};
  auto objective = [&] {
    std::vector<Matrix> P, Y;
    for (const auto& p : raw_p) P.push_back(normalize_rows(p));
    for (const auto& y : raw_y) Y.push_back(normalize_rows(y));
    return (similarity_matrix(P, Y, t, Exec::Serial).array() * dR.array()).sum();
  };
  std::vector<Matrix> P, Y;
  for (const auto& p : raw_p) P.push_back(normalize_rows(p));
  for (const auto& y : raw_y) Y.push_back(normalize_rows(y));
  const SimilarityGrad g = similarity_backward(P, Y, t, dR, Exec::Serial);
  const SimilarityGrad gp = similarity_backward(P, Y, t, dR, Exec::Parallel);

  const double h = 1e-6;
  double worst = 0.0;
  auto check = [&](std::vector<Matrix>& raw, const std::vector<Matrix>& d_unit) {
    for (std::size_t n = 0; n < raw.size(); ++n) {
      const Matrix analytic = normalize_rows_backward(raw[n], d_unit[n]);
      for (Index r = 0; r < raw[n].rows(); ++r)
        for (Index c = 0; c < d; ++c) {
          const double keep = raw[n](r, c);
          raw[n](r, c) = keep + h;
          const double up = objective();
          raw[n](r, c) = keep - h;
          const double down = objective();
          raw[n](r, c) = keep;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(fd - analytic(r, c)) / std::max(1e-6, std::abs(fd) + std::abs(analytic(r, c))));
        }
    }
  };
  check(raw_p, g.d_programs);
  check(raw_y, g.d_texts);
  CHECK(worst < 1e-6);
  for (std::size_t n = 0; n < g.d_programs.size(); ++n) CHECK(gp.d_programs[n] == g.d_programs[n]);
  for (std::size_t n = 0; n < g.d_texts.size(); ++n) CHECK(gp.d_texts[n] == g.d_texts[n]);
}

TEST_CASE("row normalization and its backward pass") {
  Rng rng(12);
  const Matrix x = gaussian_matrix(4, 3, rng);
  const Matrix y = normalize_rows(x);
  for (Index r = 0; r < 4; ++r) CHECK(y.row(r).norm() == doctest::Approx(1.0).epsilon(1e-15));
  const Matrix dy = gaussian_matrix(4, 3, rng);
  const Matrix dx = normalize_rows_backward(x, dy);
  const double h = 1e-6;
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 3; ++c) {
      Matrix a = x, b = x;
      a(r, c) += h;
      b(r, c) -= h;
      const double fd = ((normalize_rows(a) - normalize_rows(b)).array() * dy.array()).sum() / (2 * h);
      CHECK(std::abs(fd - dx(r, c)) <= 1e-8);
    }
  // Gradients are orthogonal to the row they normalize.
  for (Index r = 0; r < 4; ++r) CHECK(std::abs(dx.row(r).dot(x.row(r))) <= 1e-12);
}
