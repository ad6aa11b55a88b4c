#include "mcgan/metrics.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mcgan {

std::vector<int> solve_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double exact_w1(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("exact_w1: sample counts differ");
  if (a.cols() != b.cols()) throw std::invalid_argument("exact_w1: dimensions differ");
  if (a.rows() < 1) throw std::invalid_argument("exact_w1: empty measure");
  const Eigen::Index n = a.rows();
  Matrix cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).norm();
  const auto assign = solve_assignment(cost);
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) total += cost(i, assign[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(n);
}

W1Estimate averaged_w1(const Sampler& a, const Sampler& b, const W1Config& cfg, Rng& rng) {
  if (cfg.reps < 1 || cfg.samples < 1) throw std::invalid_argument("averaged_w1: reps and samples must be >= 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.reps));
  for (auto& s : seeds) s = rng();
  auto one = [&](std::size_t r) {
    Rng local(seeds[r]);
    const Matrix xa = a(local, cfg.samples);
    const Matrix xb = b(local, cfg.samples);
    return exact_w1(xa, xb);
  };
  W1Estimate est;
  est.values.resize(seeds.size());
  if (cfg.threads <= 1) {
    for (std::size_t r = 0; r < seeds.size(); ++r) est.values[r] = one(r);
  } else {
    const std::size_t workers = static_cast<std::size_t>(cfg.threads);
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t r = w; r < seeds.size(); r += workers) est.values[r] = one(r);
      }));
    for (auto& j : jobs) j.get();
  }
  const double n = static_cast<double>(est.values.size());
  est.mean = std::accumulate(est.values.begin(), est.values.end(), 0.0) / n;
  double ss = 0;
  for (double v : est.values) ss += (v - est.mean) * (v - est.mean);
  est.stddev = est.values.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return est;
}

Eigen::VectorXd scott_bandwidth(const Matrix& samples) {
  const double n = static_cast<double>(samples.rows());
  const int d = static_cast<int>(samples.cols());
  if (samples.rows() < 2) throw std::invalid_argument("scott_bandwidth: need at least two samples");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::VectorXd var = ((samples.rowwise() - mean).array().square().colwise().sum() / (n - 1)).transpose();
  Eigen::VectorXd h = var.cwiseSqrt() * std::pow(n, -1.0 / (d + 4));
  for (Eigen::Index j = 0; j < h.size(); ++j)
    if (!(h(j) > 0)) throw std::invalid_argument("scott_bandwidth: zero-variance dimension");
  return h;
}

namespace {

// log of the KDE built on `centres` (bandwidth h) at each row of `x`.
Eigen::VectorXd kde_log_density(const Matrix& x, const Matrix& centres, const Eigen::VectorXd& h,
                                std::uint64_t& evals) {
  const Eigen::Index n = centres.rows();
  const int d = static_cast<int>(centres.cols());
  const double log_norm = -std::log(static_cast<double>(n)) - 0.5 * d * std::log(2.0 * M_PI) - h.array().log().sum();
  const Eigen::ArrayXd inv_h = h.cwiseInverse().array();
  const Matrix cs = centres.array().rowwise() * inv_h.transpose();
  const Matrix xs = x.array().rowwise() * inv_h.transpose();
  Eigen::VectorXd out(x.rows());
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    e = -0.5 * (cs.rowwise() - xs.row(i)).rowwise().squaredNorm();
    const double m = e.maxCoeff();
    const double lse = m + std::log((e.array() - m).exp().sum());
    out(i) = std::max(lse + log_norm, std::log(kDensityFloor));
  }
  evals += static_cast<std::uint64_t>(x.rows()) * static_cast<std::uint64_t>(n);
  return out;
}

}  // namespace

KdeKlResult kde_kl(const Matrix& p, const Matrix& q, BandwidthRule) {
  if (p.cols() != q.cols()) throw std::invalid_argument("kde_kl: dimensions differ");
  KdeKlResult r;
  const Eigen::VectorXd lp = kde_log_density(p, p, scott_bandwidth(p), r.kernel_evaluations);
  const Eigen::VectorXd lq = kde_log_density(p, q, scott_bandwidth(q), r.kernel_evaluations);
  r.value = (lp - lq).mean();
  return r;
}

double mlp_flops(const MlpSpec& spec) {
  double total = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) total += 2.0 * spec.widths[l] * spec.widths[l + 1];
  return total;
}

FlopReport surrogate_flops(const PairSurrogateDiscriminator& spec, double n_p, double n_q, double n_eval) {
  FlopReport r;
  r.add("f1", n_p * mlp_flops(spec.f1));
  r.add("f2", n_q * mlp_flops(spec.f2));
  r.add("g", n_eval * mlp_flops(spec.g));
  r.add("h", n_eval * mlp_flops(spec.h));
  return r;
}

double kde_kernel_flops(int dim) { return 2.0 * dim; }

FlopReport kde_flops(double n_p, double n_q, int dim) {
  FlopReport r;
  r.add("p_hat", n_p * n_p * kde_kernel_flops(dim));
  r.add("q_hat", n_p * n_q * kde_kernel_flops(dim));
  return r;
}

std::vector<std::pair<long, double>> MetricHistory::series(const std::string& name) const {
  std::vector<std::pair<long, double>> out;
  for (const auto& r : rows)
    if (r.name == name) out.emplace_back(r.step, r.value);
  return out;
}

void MetricHistory::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,name,value,stddev\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.step << "," << r.name << "," << r.value << "," << r.stddev << "\n";
}

MetricHistory MetricHistory::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  MetricHistory h;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, name, value, sd;
    std::getline(ss, step, ',');
    std::getline(ss, name, ',');
    std::getline(ss, value, ',');
    std::getline(ss, sd, ',');
    h.add(std::stol(step), name, std::stod(value), sd.empty() ? 0.0 : std::stod(sd));
  }
  return h;
}

}  // namespace mcgan
