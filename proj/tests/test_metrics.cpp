#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mcgan/distributions.hpp"
#include "mcgan/metrics.hpp"
#include "support/oracles.hpp"

using namespace mcgan;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("exact_w1 examples") {
  Rng rng(0);
  const Matrix a = standard_normal(rng, 20, 2);
  CHECK(exact_w1(a, a) == 0.0);
  CHECK(exact_w1(col({0}), col({1})) == 1.0);
  CHECK(exact_w1(col({0, 1}), col({0.5, 1.5})) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(exact_w1(col({0, 1}), col({0})), std::invalid_argument);
}

TEST_CASE("exact_w1 equals brute force for n <= 6") {
  Rng rng(1);
  std::uniform_int_distribution<int> size(1, 6), dim(1, 3);
  for (int t = 0; t < 200; ++t) {
    const int n = size(rng), d = dim(rng);
    const Matrix a = standard_normal(rng, n, d), b = standard_normal(rng, n, d);
    CHECK(std::abs(exact_w1(a, b) - testing::brute_force_w1(a, b)) <= 1e-9);
  }
}

TEST_CASE("exact_w1 equals the sorted coupling in 1D") {
  Rng rng(2);
  std::uniform_int_distribution<int> size(1, 1000);
  for (int t = 0; t < 50; ++t) {
    const int n = size(rng);
    const Matrix a = standard_normal(rng, n, 1), b = standard_normal(rng, n, 1) * 2.0;
    std::vector<double> va(a.data(), a.data() + n), vb(b.data(), b.data() + n);
    CHECK(std::abs(exact_w1(a, b) - testing::sorted_w1(va, vb)) <= 1e-9);
  }
}

TEST_CASE("exact_w1 metric properties") {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const Matrix a = standard_normal(rng, 12, 2), b = standard_normal(rng, 12, 2), c = standard_normal(rng, 12, 2);
    CHECK(exact_w1(a, b) == doctest::Approx(exact_w1(b, a)).epsilon(1e-14));
    CHECK(exact_w1(a, c) <= exact_w1(a, b) + exact_w1(b, c) + 1e-9);
    CHECK(exact_w1(a, b) > 0);
  }
  Matrix a = standard_normal(rng, 8, 2);
  Matrix perm = a.colwise().reverse();
  CHECK(exact_w1(a, perm) == 0.0);
}

TEST_CASE("averaged_w1") {
  const Sampler point = [](Rng&, Eigen::Index n) { return Matrix(Matrix::Constant(n, 2, 0.7)); };
  Rng rng(4);
  const W1Estimate zero = averaged_w1(point, point, {32, 5}, rng);
  CHECK(zero.mean == 0.0);

  const Sampler ring = [](Rng& r, Eigen::Index n) { return sample_target2d(Target2d::Ring8, n, r).samples; };
  const W1Estimate base = averaged_w1(ring, ring, {64, 10}, rng);
  CHECK(base.mean > 0);
  CHECK(base.values.size() == 10);

  Rng r1(7), r2(7);
  const W1Estimate serial = averaged_w1(ring, ring, {64, 6, 1}, r1);
  const W1Estimate parallel = averaged_w1(ring, ring, {64, 6, 3}, r2);
  CHECK(serial.values == parallel.values);
  CHECK(serial.mean == parallel.mean);

  // Standard error of the mean shrinks with reps (seed-averaged).
  double prev = INFINITY;
  for (int reps : {10, 40, 160}) {
    double se = 0;
    for (std::uint64_t s = 0; s < 4; ++s) {
      Rng r(100 + s);
      const W1Estimate e = averaged_w1(ring, ring, {16, reps}, r);
      se += e.stddev / std::sqrt(static_cast<double>(reps));
    }
    CHECK(se < prev);
    prev = se;
  }
  CHECK_THROWS_AS(averaged_w1(ring, ring, {0, 3}, rng), std::invalid_argument);
}

TEST_CASE("kde_kl") {
  Rng rng(5);
  const Matrix p = standard_normal(rng, 300, 2);
  const KdeKlResult same = kde_kl(p, p);
  CHECK(same.value == 0.0);
  CHECK(same.kernel_evaluations == 2u * 300u * 300u);
  const Matrix p2 = standard_normal(rng, 600, 2);
  CHECK(kde_kl(p2, p2).kernel_evaluations == 4 * same.kernel_evaluations);

  const Matrix a = standard_normal(rng, 10000, 2), b = standard_normal(rng, 10000, 2);
  CHECK(std::abs(kde_kl(a, b).value) < 0.1);

  // Far-apart sets hit the density floor instead of producing infinities.
  const Matrix far = standard_normal(rng, 50, 2).array() + 1e4;
  const KdeKlResult r = kde_kl(standard_normal(rng, 50, 2), far);
  CHECK(std::isfinite(r.value));
  CHECK_THROWS_AS(kde_kl(Matrix::Zero(1, 2), Matrix::Zero(5, 2)), std::invalid_argument);
}

TEST_CASE("FLOP accounting") {
  CHECK(mlp_flops(MlpSpec{{2, 32, 1}}) == 2 * 2 * 32 + 2 * 32 * 1);
  const auto spec = arch::dsr_kl(2);
  const FlopReport a = surrogate_flops(spec, 100, 100, 200);
  const FlopReport b = surrogate_flops(spec, 200, 100, 200);
  const FlopReport c = surrogate_flops(spec, 300, 100, 200);
  CHECK(c.total - b.total == b.total - a.total);
  double sum = 0;
  for (const auto& [name, v] : a.breakdown) sum += v;
  CHECK(sum == a.total);
  for (double n : {100.0, 1000.0}) {
    const FlopReport s1 = surrogate_flops(spec, n, n, 2 * n), s2 = surrogate_flops(spec, 2 * n, 2 * n, 4 * n);
    CHECK(s2.total == 2 * s1.total);
    const FlopReport k1 = kde_flops(n, n, 2), k2 = kde_flops(2 * n, 2 * n, 2);
    CHECK(k2.total == 4 * k1.total);
    CHECK(k1.total == 2 * n * n * kde_kernel_flops(2));
  }
}

TEST_CASE("metric history CSV round trip") {
  MetricHistory h;
  h.add(0, "w1", 0.1234567890123456789, 0.01);
  h.add(500, "w1", 1.0 / 3.0);
  const auto path = (std::filesystem::temp_directory_path() / "mcgan_hist.csv").string();
  h.write_csv(path);
  const MetricHistory r = MetricHistory::read_csv(path);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].value == h.rows[0].value);
  CHECK(r.rows[0].stddev == 0.01);
  CHECK(r.series("w1")[1].second == 1.0 / 3.0);
  std::filesystem::remove(path);
}
