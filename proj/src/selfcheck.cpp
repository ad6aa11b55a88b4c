#include "mcgan/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mcgan/autodiff.hpp"
#include "mcgan/distributions.hpp"
#include "mcgan/metrics.hpp"
#include "mcgan/nn.hpp"

namespace mcgan {
namespace {

double rel_err(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max({got.norm(), want.norm(), 1e-12});
}

Bindings bindings_of(const Graph& g) {
  Bindings b;
  for (NodeId id : g.leaves()) b[id.index] = g.value(id);
  return b;
}

// Central differences of scalar `out` w.r.t. every entry of `leaf`.
Matrix central_difference(Graph& g, NodeId out, NodeId leaf, double h) {
  const Bindings base = bindings_of(g);
  const Matrix x0 = base.at(leaf.index);
  Matrix grad(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Bindings b = base;
    b[leaf.index].data()[i] = x0.data()[i] + h;
    g.evaluate(b);
    const double up = g.scalar_value(out);
    b[leaf.index].data()[i] = x0.data()[i] - h;
    g.evaluate(b);
    grad.data()[i] = (up - g.scalar_value(out)) / (2 * h);
  }
  g.evaluate(base);
  return grad;
}

MlpSpec random_tanh_mlp(Rng& rng) {
  std::uniform_int_distribution<int> width(1, 6), depth(1, 3);
  MlpSpec spec;
  spec.activation = Activation::Tanh;
  spec.widths.push_back(width(rng));
  for (int l = depth(rng); l > 0; --l) spec.widths.push_back(width(rng));
  spec.widths.push_back(1);
  return spec;
}

// Worst relative error of the first-order gradients of a random network.
double first_order_error(Rng& rng) {
  const MlpSpec spec = random_tanh_mlp(rng);
  const ParamStore p = init_params(spec, rng);
  Graph g;
  const auto b = bind_params(g, p);
  const NodeId x = g.leaf(standard_normal(rng, 4, spec.input_width()));
  const NodeId y = mlp_apply(g, spec, b.span(), x);
  const NodeId loss = g.mean(g.mul(y, y));
  std::vector<NodeId> wrt = b.ids;
  wrt.push_back(x);
  const auto grads = gradient(g, loss, wrt).values;
  double worst = 0;
  for (std::size_t i = 0; i < wrt.size(); ++i)
    worst = std::max(worst, rel_err(grads[i], central_difference(g, loss, wrt[i], 1e-5)));
  return worst;
}

// Worst relative error of the parameter gradients of a gradient penalty.
double second_order_error(Rng& rng) {
  const MlpSpec spec = random_tanh_mlp(rng);
  const ParamStore p = init_params(spec, rng);
  Graph g;
  const auto b = bind_params(g, p);
  const NodeId x = g.leaf(standard_normal(rng, 3, spec.input_width()));
  const NodeId penalty = gradient_penalty(g, mlp_apply(g, spec, b.span(), x), x);
  const auto grads = gradient(g, penalty, b.span()).values;
  double worst = 0;
  for (std::size_t i = 0; i < b.ids.size(); ++i)
    worst = std::max(worst, rel_err(grads[i], central_difference(g, penalty, b.ids[i], 1e-5)));
  return worst;
}

double enumerated_w1(const Matrix& a, const Matrix& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double total = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) total += (a.row(i) - b.row(perm[static_cast<std::size_t>(i)])).norm();
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(a.rows());
}

double sorted_w1(Matrix a, Matrix b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  return (a - b).cwiseAbs().mean();
}

GaussianSpec random_gaussian(Rng& rng, int d) {
  const Matrix m = standard_normal(rng, d, d);
  return GaussianSpec(standard_normal(rng, d, 1).col(0),
                      m * m.transpose() + 0.5 * Matrix::Identity(d, d));
}

std::string format(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

CheckResult bound_check(const std::string& name, double worst, double tol) {
  return {name, worst <= tol, "worst " + format(worst) + " (tolerance " + format(tol) + ")"};
}

}  // namespace

std::vector<CheckResult> run_self_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;

  double worst = 0;
  for (int i = 0; i < 25; ++i) worst = std::max(worst, first_order_error(rng));
  out.push_back(bound_check("first-order gradients vs finite differences", worst, 1e-5));

  worst = 0;
  for (int i = 0; i < 10; ++i) worst = std::max(worst, second_order_error(rng));
  out.push_back(bound_check("gradient-penalty gradients vs finite differences", worst, 1e-4));

  worst = 0;
  std::uniform_int_distribution<int> small(1, 6);
  for (int i = 0; i < 50; ++i) {
    const int n = small(rng);
    const Matrix a = standard_normal(rng, n, 2), b = standard_normal(rng, n, 2);
    worst = std::max(worst, std::abs(exact_w1(a, b) - enumerated_w1(a, b)));
  }
  out.push_back(bound_check("W1 vs exhaustive matching", worst, 1e-9));

  worst = 0;
  for (int n : {1, 7, 50, 300}) {
    const Matrix a = standard_normal(rng, n, 1), b = 2.0 * standard_normal(rng, n, 1);
    worst = std::max(worst, std::abs(exact_w1(a, b) - sorted_w1(a, b)));
  }
  out.push_back(bound_check("W1 vs sorted 1D coupling", worst, 1e-9));

  worst = 0;
  for (int d = 1; d <= 3; ++d) {
    const GaussianSpec p = random_gaussian(rng, d), q = random_gaussian(rng, d);
    worst = std::max(worst, std::abs(analytic_kl(p, p)));
    if (analytic_kl(p, q) < 0) worst = INFINITY;
  }
  {
    const GaussianSpec p(Eigen::VectorXd::Constant(1, 0.3), Matrix::Constant(1, 1, 0.5));
    const GaussianSpec q(Eigen::VectorXd::Constant(1, -1.0), Matrix::Constant(1, 1, 2.0));
    const double closed = 0.5 * std::log(2.0 / 0.5) + (0.5 + 1.3 * 1.3) / (2 * 2.0) - 0.5;
    worst = std::max(worst, std::abs(analytic_kl(p, q) - closed));
  }
  out.push_back(bound_check("Gaussian KL identities", worst, 1e-12));

  worst = 0;
  for (int d = 1; d <= 3; ++d) {
    const GaussianSpec p = random_gaussian(rng, d), q = random_gaussian(rng, d);
    const Matrix a = gaussian_ot_matrix(p, q);
    worst = std::max(worst, (a * p.cov() * a.transpose() - q.cov()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a - a.transpose()).cwiseAbs().maxCoeff());
  }
  out.push_back(bound_check("Gaussian OT map pushes P onto Q", worst, 1e-9));
  return out;
}

}  // namespace mcgan
