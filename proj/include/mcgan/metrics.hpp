#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mcgan/nn.hpp"

namespace mcgan {

/// Exact W1 between two equal-size uniform empirical measures (Euclidean
/// ground cost), via a shortest-augmenting-path assignment solver.
double exact_w1(const Matrix& a, const Matrix& b);

/// Optimal assignment for a square cost matrix; returns column for each row.
std::vector<int> solve_assignment(const Matrix& cost);

using Sampler = std::function<Matrix(Rng&, Eigen::Index)>;

struct W1Config {
  Eigen::Index samples = 256;
  int reps = 20;
  int threads = 1;
};

struct W1Estimate {
  double mean = 0;
  double stddev = 0;
  std::vector<double> values;
};

/// Average of exact_w1 over independent draws. Each repetition gets its own
/// rng stream seeded from `rng`, so the result does not depend on `threads`.
W1Estimate averaged_w1(const Sampler& a, const Sampler& b, const W1Config& cfg, Rng& rng);

struct KdeKlResult {
  double value = 0;
  std::uint64_t kernel_evaluations = 0;
};

enum class BandwidthRule { Scott };

/// Per-dimension Scott bandwidth: sd_j * n^(-1/(d+4)).
Eigen::VectorXd scott_bandwidth(const Matrix& samples);

/// KL(P || Q) estimated as mean over P samples of log p_hat - log q_hat, with
/// product Gaussian KDEs and densities floored at 1e-300.
KdeKlResult kde_kl(const Matrix& p, const Matrix& q, BandwidthRule rule = BandwidthRule::Scott);

inline constexpr double kDensityFloor = 1e-300;

/// FLOPs of one forward pass of an MLP on one point (2 * in * out per layer).
double mlp_flops(const MlpSpec& spec);

struct FlopReport {
  double total = 0;
  std::vector<std::pair<std::string, double>> breakdown;

  void add(const std::string& name, double flops) {
    breakdown.emplace_back(name, flops);
    total += flops;
  }
};

/// Surrogate cost: n_p f1 passes, n_q f2 passes and n_eval passes of g and h.
FlopReport surrogate_flops(const PairSurrogateDiscriminator& spec, double n_p, double n_q, double n_eval);

/// Cost of one Gaussian product kernel evaluation in d dimensions.
double kde_kernel_flops(int dim);

/// KDE cost: p_hat at the n_p points of P (n_p^2 kernels) plus q_hat at the
/// same points (n_p n_q kernels); 2 n_p n_q kernels when n_p = n_q.
FlopReport kde_flops(double n_p, double n_q, int dim);

/// Metric history, written as CSV with header step,name,value,stddev.
struct MetricHistory {
  struct Row {
    long step;
    std::string name;
    double value;
    double stddev = 0;
  };
  std::vector<Row> rows;

  void add(long step, const std::string& name, double value, double stddev = 0) {
    rows.push_back({step, name, value, stddev});
  }
  std::vector<std::pair<long, double>> series(const std::string& name) const;
  void write_csv(const std::string& path) const;
  static MetricHistory read_csv(const std::string& path);
};

}  // namespace mcgan
