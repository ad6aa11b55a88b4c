#include "mcgan/distributions.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mcgan {

GaussianSpec::GaussianSpec(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  const auto d = mean_.size();
  if (d < 1) throw std::invalid_argument("GaussianSpec: empty mean");
  if (cov_.rows() != d || cov_.cols() != d) throw std::invalid_argument("GaussianSpec: covariance shape mismatch");
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("GaussianSpec: covariance not symmetric");
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("GaussianSpec: covariance not positive definite");
  chol_ = llt.matrixL();
  if (chol_.diagonal().minCoeff() <= 0) throw std::invalid_argument("GaussianSpec: covariance not positive definite");
}

EmpiricalMeasure::EmpiricalMeasure(Matrix s) : samples(std::move(s)) {
  if (samples.rows() < 1) throw std::invalid_argument("EmpiricalMeasure: needs at least one sample");
  if (!samples.allFinite()) throw std::invalid_argument("EmpiricalMeasure: non-finite sample");
}

EmpiricalMeasure sample_gaussian(const GaussianSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_gaussian: n must be >= 1");
  Matrix z = standard_normal(rng, n, spec.dim());
  Matrix x = z * spec.chol().transpose();
  x.rowwise() += spec.mean().transpose();
  return EmpiricalMeasure(std::move(x));
}

GaussianLaw regime_law(Regime r) {
  GaussianLaw law;
  if (r == Regime::Train)
    law.mean_ranges = {{-0.5, -0.15}, {0.15, 0.5}};
  else
    law.mean_ranges = {{-0.15, 0.15}};
  law.std_range = {0.5, 1.0};
  law.corr_range = {-0.5, 0.5};
  return law;
}

MeasurePairFamily MeasurePairFamily::regime(Regime r, int dim) { return mixed(r, r, dim); }

MeasurePairFamily MeasurePairFamily::mixed(Regime p, Regime q, int dim) {
  MeasurePairFamily f;
  f.dim = dim;
  f.p_law = regime_law(p);
  f.q_law = regime_law(q);
  return f;
}

namespace {

double draw(const Interval& iv, Rng& rng) {
  if (iv.width() == 0) return iv.lo;
  return std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
}

double draw_union(const std::vector<Interval>& ranges, Rng& rng) {
  double total = 0;
  for (const auto& iv : ranges) total += iv.width();
  if (total == 0) return ranges.front().lo;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (const auto& iv : ranges) {
    if (u < iv.width()) return iv.lo + u;
    u -= iv.width();
  }
  return ranges.back().hi;
}

}  // namespace

GaussianSpec sample_gaussian_from_law(const GaussianLaw& law, int dim, Rng& rng) {
  if (law.mean_ranges.empty()) throw std::invalid_argument("GaussianLaw: no mean ranges");
  Vector mean(dim);
  for (int i = 0; i < dim; ++i) mean(i) = draw_union(law.mean_ranges, rng);
  Vector sd(dim);
  for (int i = 0; i < dim; ++i) sd(i) = draw(law.std_range, rng);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix corr = Matrix::Identity(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = i + 1; j < dim; ++j) corr(i, j) = corr(j, i) = draw(law.corr_range, rng);
    Eigen::LLT<Matrix> llt(corr);
    if (llt.info() != Eigen::Success) continue;
    const Matrix cov = sd.asDiagonal() * corr * sd.asDiagonal();
    return GaussianSpec(mean, cov);
  }
  throw std::runtime_error("sample_measure_pair: 1000 consecutive non-positive-definite correlation draws");
}

std::pair<GaussianSpec, GaussianSpec> sample_measure_pair(const MeasurePairFamily& family, Rng& rng) {
  GaussianSpec p = sample_gaussian_from_law(family.p_law, family.dim, rng);
  GaussianSpec q = sample_gaussian_from_law(family.q_law, family.dim, rng);
  return {std::move(p), std::move(q)};
}

double analytic_kl(const GaussianSpec& p, const GaussianSpec& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("analytic_kl: dimension mismatch");
  const int d = p.dim();
  const Matrix& lq = q.chol();
  const double logdet_q = 2.0 * lq.diagonal().array().log().sum();
  const double logdet_p = 2.0 * p.chol().diagonal().array().log().sum();
  const auto llt = Eigen::LLT<Matrix>(q.cov());
  const double trace = llt.solve(p.cov()).trace();
  const Vector delta = p.mean() - q.mean();
  const double maha = delta.dot(llt.solve(delta));
  return 0.5 * (logdet_q - logdet_p - d + trace + maha);
}

namespace {

Matrix sym_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

Matrix gaussian_ot_matrix(const GaussianSpec& p, const GaussianSpec& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("gaussian_ot_map: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.cov());
  if (es.eigenvalues().minCoeff() <= 0) throw std::invalid_argument("gaussian_ot_map: singular source covariance");
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Matrix inv_root =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  const Matrix middle = sym_sqrt(root * q.cov() * root);
  Matrix a = inv_root * middle * inv_root;
  return 0.5 * (a + a.transpose());
}

Matrix gaussian_ot_map(const GaussianSpec& p, const GaussianSpec& q, const Matrix& x) {
  const Matrix a = gaussian_ot_matrix(p, q);
  Matrix centered = x.rowwise() - p.mean().transpose();
  Matrix out = centered * a.transpose();
  out.rowwise() += q.mean().transpose();
  return out;
}

Target2d target2d_from_string(const std::string& name) {
  if (name == "ring8") return Target2d::Ring8;
  if (name == "grid25") return Target2d::Grid25;
  if (name == "spiral") return Target2d::Spiral;
  throw std::invalid_argument("unknown 2D target: " + name);
}

std::string to_string(Target2d t) {
  switch (t) {
    case Target2d::Ring8: return "ring8";
    case Target2d::Grid25: return "grid25";
    case Target2d::Spiral: return "spiral";
  }
  return "?";
}

Matrix target2d_centers(Target2d t) {
  if (t == Target2d::Ring8) {
    Matrix c(8, 2);
    for (int k = 0; k < 8; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / 8.0;
      c(k, 0) = 2.0 * std::cos(angle);
      c(k, 1) = 2.0 * std::sin(angle);
    }
    return c;
  }
  if (t == Target2d::Grid25) {
    Matrix c(25, 2);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        c(5 * i + j, 0) = i - 2.0;
        c(5 * i + j, 1) = j - 2.0;
      }
    return c;
  }
  return Matrix(0, 2);
}

EmpiricalMeasure sample_target2d(Target2d t, Eigen::Index n, Rng& rng) {
  return sample_target2d(t, n, rng, nullptr);
}

EmpiricalMeasure sample_target2d(Target2d t, Eigen::Index n, Rng& rng, std::vector<int>* component) {
  if (n < 1) throw std::invalid_argument("sample_target2d: n must be >= 1");
  std::normal_distribution<double> noise(0.0, kTargetNoiseStd);
  Matrix x(n, 2);
  if (component) component->assign(static_cast<std::size_t>(n), 0);
  if (t == Target2d::Spiral) {
    // Two turns of r = theta / (2 pi), scaled to radius 2.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = u(rng);
      const double theta = 4.0 * std::numbers::pi * s;
      const double r = 2.0 * s + noise(rng);
      x(i, 0) = r * std::cos(theta);
      x(i, 1) = r * std::sin(theta);
    }
    return EmpiricalMeasure(std::move(x));
  }
  const Matrix centers = target2d_centers(t);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(centers.rows()) - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = pick(rng);
    if (component) (*component)[static_cast<std::size_t>(i)] = k;
    x(i, 0) = centers(k, 0) + noise(rng);
    x(i, 1) = centers(k, 1) + noise(rng);
  }
  return EmpiricalMeasure(std::move(x));
}

void write_samples_csv(const std::string& path, const Matrix& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << "\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << samples(i, j);
    out << "\n";
  }
}

Matrix read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  std::size_t dim = 1;
  for (char c : line) dim += c == ',';
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++count;
    }
    if (count != dim) throw std::runtime_error(path + ": row " + std::to_string(rows + 1) + " has wrong width");
    ++rows;
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * dim + j];
  return m;
}

}  // namespace mcgan
