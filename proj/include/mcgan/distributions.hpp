#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcgan/nn.hpp"

namespace mcgan {

using Vector = Eigen::VectorXd;

/// N(mean, cov). Construction validates symmetry and positive definiteness.
class GaussianSpec {
 public:
  GaussianSpec(Vector mean, Matrix cov);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  /// Lower Cholesky factor L with cov = L L^T.
  const Matrix& chol() const { return chol_; }

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
};

/// Finite uniformly weighted sample set, one sample per row.
struct EmpiricalMeasure {
  Matrix samples;

  explicit EmpiricalMeasure(Matrix s);
  Eigen::Index size() const { return samples.rows(); }
  int dim() const { return static_cast<int>(samples.cols()); }
};

EmpiricalMeasure sample_gaussian(const GaussianSpec& spec, Eigen::Index n, Rng& rng);

struct Interval {
  double lo = 0, hi = 0;
  double width() const { return hi - lo; }
};

/// Law over Gaussians: each mean component drawn uniformly from the union of
/// `mean_ranges`; each sqrt(cov_ii) from `std_range`; each correlation from
/// `corr_range`.
struct GaussianLaw {
  std::vector<Interval> mean_ranges;
  Interval std_range;
  Interval corr_range;
};

enum class Regime { Train, Test };

GaussianLaw regime_law(Regime r);

/// Distribution over (P, Q) pairs; P and Q are drawn independently.
struct MeasurePairFamily {
  int dim = 2;
  GaussianLaw p_law;
  GaussianLaw q_law;

  /// P and Q both from the given regime.
  static MeasurePairFamily regime(Regime r, int dim);
  /// P from `p`, Q from `q`.
  static MeasurePairFamily mixed(Regime p, Regime q, int dim);
  /// Degrees of freedom of one (P, Q) pair: d(d+3).
  int degrees_of_freedom() const { return dim * (dim + 3); }
};

GaussianSpec sample_gaussian_from_law(const GaussianLaw& law, int dim, Rng& rng);
std::pair<GaussianSpec, GaussianSpec> sample_measure_pair(const MeasurePairFamily& family, Rng& rng);

/// KL(p || q) in closed form.
double analytic_kl(const GaussianSpec& p, const GaussianSpec& q);

/// Matrix A of the Monge map T(x) = m_q + A (x - m_p) between Gaussians.
Matrix gaussian_ot_matrix(const GaussianSpec& p, const GaussianSpec& q);
/// Applies T row-wise to `x` (n, d).
Matrix gaussian_ot_map(const GaussianSpec& p, const GaussianSpec& q, const Matrix& x);

enum class Target2d { Ring8, Grid25, Spiral };
Target2d target2d_from_string(const std::string& name);
std::string to_string(Target2d t);

inline constexpr double kTargetNoiseStd = 0.05;

/// Mode centres of the mixture targets (empty for the spiral).
Matrix target2d_centers(Target2d t);
EmpiricalMeasure sample_target2d(Target2d t, Eigen::Index n, Rng& rng);
/// Same as sample_target2d, also returning the mixture component of each row.
EmpiricalMeasure sample_target2d(Target2d t, Eigen::Index n, Rng& rng, std::vector<int>* component);

// Sample CSV: header x0,...,x{d-1}; 17 significant digits.
void write_samples_csv(const std::string& path, const Matrix& samples);
Matrix read_samples_csv(const std::string& path);

}  // namespace mcgan
