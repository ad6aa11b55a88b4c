#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mcgan/distributions.hpp"

using namespace mcgan;

namespace {

GaussianSpec iso(int d, double var, double mean = 0.0) {
  return GaussianSpec(Vector::Constant(d, mean), Matrix::Identity(d, d) * var);
}

// KL via log-density Monte Carlo, independent of the closed form.
double mc_kl(const GaussianSpec& p, const GaussianSpec& q, Eigen::Index n, Rng& rng) {
  auto logpdf = [](const GaussianSpec& s, const Eigen::RowVectorXd& x) {
    const Vector r = s.chol().triangularView<Eigen::Lower>().solve((x.transpose() - s.mean()).eval());
    return -0.5 * r.squaredNorm() - s.chol().diagonal().array().log().sum();
  };
  const Matrix x = sample_gaussian(p, n, rng).samples;
  double acc = 0;
  for (Eigen::Index i = 0; i < n; ++i) acc += logpdf(p, x.row(i)) - logpdf(q, x.row(i));
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("GaussianSpec validation") {
  CHECK_THROWS_AS(GaussianSpec(Vector::Zero(2), Matrix::Identity(3, 3)), std::invalid_argument);
  Matrix asym(2, 2);
  asym << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(GaussianSpec(Vector::Zero(2), asym), std::invalid_argument);
  Matrix indef(2, 2);
  indef << 1, 2, 2, 1;
  CHECK_THROWS_AS(GaussianSpec(Vector::Zero(2), indef), std::invalid_argument);
  CHECK_THROWS_AS(EmpiricalMeasure(Matrix(0, 2)), std::invalid_argument);
}

TEST_CASE("sample_gaussian moments, single point, determinism") {
  Rng rng(0);
  const auto m = sample_gaussian(iso(2, 1.0), 100000, rng);
  CHECK(m.samples.colwise().mean().cwiseAbs().maxCoeff() < 0.02);
  Rng r1(5), r2(5);
  CHECK(sample_gaussian(iso(3, 2.0), 1, r1).size() == 1);
  CHECK(sample_gaussian(iso(3, 2.0), 10, r1).samples == [&] {
    sample_gaussian(iso(3, 2.0), 1, r2);
    return sample_gaussian(iso(3, 2.0), 10, r2).samples;
  }());
}

TEST_CASE("measure pair family ranges and PSD") {
  Rng rng(1);
  const auto train = MeasurePairFamily::regime(Regime::Train, 2);
  CHECK(train.degrees_of_freedom() == 10);
  CHECK(MeasurePairFamily::regime(Regime::Train, 3).degrees_of_freedom() == 18);
  for (int i = 0; i < 500; ++i) {
    const auto [p, q] = sample_measure_pair(train, rng);
    for (const auto* s : {&p, &q}) {
      for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(s->mean()(k)) >= 0.15);
        CHECK(std::abs(s->mean()(k)) <= 0.5);
        const double sd = std::sqrt(s->cov()(k, k));
        CHECK(sd >= 0.5 - 1e-12);
        CHECK(sd <= 1.0 + 1e-12);
      }
      CHECK(std::abs(s->cov()(0, 1)) / std::sqrt(s->cov()(0, 0) * s->cov()(1, 1)) <= 0.5 + 1e-12);
      CHECK(Eigen::LLT<Matrix>(s->cov()).info() == Eigen::Success);
    }
  }
  const auto test = MeasurePairFamily::regime(Regime::Test, 4);
  for (int i = 0; i < 200; ++i) {
    const auto [p, q] = sample_measure_pair(test, rng);
    CHECK(p.mean().cwiseAbs().maxCoeff() <= 0.15);
    CHECK(Eigen::LLT<Matrix>(q.cov()).info() == Eigen::Success);
  }
  // A correlation law that can never be PD in 3D.
  MeasurePairFamily bad = MeasurePairFamily::regime(Regime::Train, 3);
  bad.p_law.corr_range = {-0.99, -0.99};
  CHECK_THROWS_AS(sample_measure_pair(bad, rng), std::runtime_error);
}

TEST_CASE("analytic_kl examples and properties") {
  CHECK(analytic_kl(iso(2, 1.0), iso(2, 1.0)) == 0.0);
  const GaussianSpec shifted(Vector::Constant(2, 0.3), Matrix::Identity(2, 2));
  CHECK(analytic_kl(shifted, iso(2, 1.0)) == doctest::Approx(0.09).epsilon(1e-14));
  CHECK(analytic_kl(iso(2, 0.25), iso(2, 1.0)) == doctest::Approx(0.5 * (std::log(16.0) - 2 + 0.5)).epsilon(1e-14));

  Rng rng(2);
  const auto fam = MeasurePairFamily::regime(Regime::Train, 2);
  int asym = 0;
  for (int i = 0; i < 100; ++i) {
    const auto [p, q] = sample_measure_pair(fam, rng);
    CHECK(analytic_kl(p, q) > 0);
    CHECK(std::abs(analytic_kl(p, p)) < 1e-14);
    asym += std::abs(analytic_kl(p, q) - analytic_kl(q, p)) > 1e-9;
  }
  CHECK(asym > 90);

  for (int i = 0; i < 5; ++i) {
    const auto [p, q] = sample_measure_pair(MeasurePairFamily::regime(Regime::Train, 3), rng);
    const double n = 200000;
    const double est = mc_kl(p, q, static_cast<Eigen::Index>(n), rng);
    CHECK(std::abs(est - analytic_kl(p, q)) < 0.02);
  }
  CHECK_THROWS_AS(analytic_kl(iso(2, 1.0), iso(3, 1.0)), std::invalid_argument);
}

TEST_CASE("gaussian_ot_map") {
  const GaussianSpec p(Vector::Zero(1), Matrix::Identity(1, 1));
  const GaussianSpec q(Vector::Ones(1), Matrix::Identity(1, 1) * 4.0);
  CHECK(gaussian_ot_map(p, q, Matrix::Constant(1, 1, 2.0))(0, 0) == doctest::Approx(5.0).epsilon(1e-14));

  Rng rng(3);
  const auto fam = MeasurePairFamily::regime(Regime::Train, 2);
  for (int i = 0; i < 20; ++i) {
    const auto [a, b] = sample_measure_pair(fam, rng);
    const Matrix x = standard_normal(rng, 7, 2);
    CHECK((gaussian_ot_map(a, a, x) - x).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix m = gaussian_ot_matrix(a, b);
    CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(m).eigenvalues().minCoeff() > 0);
    CHECK((m * a.cov() * m - b.cov()).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto [a, b] = sample_measure_pair(fam, rng);
  const Matrix y = gaussian_ot_map(a, b, sample_gaussian(a, 10000, rng).samples);
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const Matrix c = y.rowwise() - mean;
  CHECK((mean.transpose() - b.mean()).cwiseAbs().maxCoeff() < 0.05);
  CHECK((c.transpose() * c / 9999.0 - b.cov()).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("2D targets") {
  const Matrix ring = target2d_centers(Target2d::Ring8);
  for (Eigen::Index k = 0; k < 8; ++k) CHECK(ring.row(k).norm() == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(target2d_centers(Target2d::Grid25).rows() == 25);
  Rng rng(4);
  CHECK_THROWS_AS(sample_target2d(Target2d::Ring8, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(target2d_from_string("moons"), std::invalid_argument);

  const Eigen::Index n = 80000;
  std::vector<int> comp;
  const auto s = sample_target2d(Target2d::Ring8, n, rng, &comp);
  std::vector<long> counts(8, 0);
  for (int c : comp) ++counts[static_cast<std::size_t>(c)];
  const double sd = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (long c : counts) CHECK(std::abs(c - n / 8.0) < 4 * sd);
  double max_dev = 0;
  for (Eigen::Index i = 0; i < n; ++i) max_dev = std::max(max_dev, (s.samples.row(i) - ring.row(comp[i])).norm());
  CHECK(max_dev < 0.5);

  const auto sp = sample_target2d(Target2d::Spiral, 1000, rng);
  CHECK(sp.samples.rowwise().norm().maxCoeff() < 2.5);
  CHECK(to_string(target2d_from_string("grid25")) == "grid25");
}

TEST_CASE("sample CSV round trip") {
  Rng rng(5);
  const Matrix m = standard_normal(rng, 17, 3) * 1e-3;
  const auto path = (std::filesystem::temp_directory_path() / "mcgan_samples_test.csv").string();
  write_samples_csv(path, m);
  CHECK(read_samples_csv(path) == m);
  std::FILE* f = std::fopen(path.c_str(), "r");
  char header[32] = {};
  CHECK(std::fgets(header, sizeof header, f) != nullptr);
  std::fclose(f);
  CHECK(std::string(header) == "x0,x1,x2\n");
  std::filesystem::remove(path);
}
