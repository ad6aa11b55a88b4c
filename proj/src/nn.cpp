#include "mcgan/nn.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace mcgan {

Matrix standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + s);
}

// ---------------------------------------------------------------- MlpSpec

void MlpSpec::validate() const {
  if (widths.size() < 3) throw std::invalid_argument("MlpSpec needs at least one hidden layer");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("MlpSpec widths must be positive");
}

std::size_t MlpSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    total += static_cast<std::size_t>(widths[i]) * widths[i + 1] + widths[i + 1];
  return total;
}

std::string MlpSpec::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "-" : "") << widths[i];
  os << ":" << to_string(activation);
  if (output == OutputActivation::Sigmoid) os << ":sigmoid";
  if (output == OutputActivation::Softplus) os << ":softplus";
  return os.str();
}

// ---------------------------------------------------------------- ParamStore

std::size_t ParamStore::count() const {
  std::size_t total = 0;
  for (const auto& e : entries) total += static_cast<std::size_t>(e.value.size());
  return total;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  throw std::out_of_range("no parameter named " + name);
}

void ParamStore::append(const ParamStore& other, const std::string& prefix) {
  for (const auto& e : other.entries) entries.push_back({prefix + e.name, e.value});
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries) {
    mix(e.name.data(), e.name.size());
    mix(e.value.data(), static_cast<std::size_t>(e.value.size()) * sizeof(double));
  }
  return h;
}

BoundParams bind_params(Graph& graph, const ParamStore& params) {
  BoundParams b;
  b.ids.reserve(params.size());
  for (const auto& e : params.entries) b.ids.push_back(graph.leaf(e.value));
  return b;
}

// ---------------------------------------------------------------- composites

void MeasureConditionalDiscriminator::validate() const {
  f.validate();
  g.validate();
  h.validate();
  if (f.input_width() != g.input_width())
    throw std::invalid_argument("D_mc: f and g must read the same data dimension");
  if (h.input_width() != f.output_width() + g.output_width())
    throw std::invalid_argument("D_mc: h input width must equal f + g output widths");
}

std::size_t MeasureConditionalDiscriminator::param_count() const {
  return f.param_count() + g.param_count() + h.param_count();
}

std::string MeasureConditionalDiscriminator::describe() const {
  return "dmc(f=" + f.describe() + ",g=" + g.describe() + ",h=" + h.describe() + ")";
}

void PairSurrogateDiscriminator::validate() const {
  f1.validate();
  f2.validate();
  g.validate();
  h.validate();
  if (f1.input_width() != g.input_width() || f2.input_width() != g.input_width())
    throw std::invalid_argument("D_sr: f1, f2 and g must read the same data dimension");
  if (h.input_width() != f1.output_width() + f2.output_width() + g.output_width())
    throw std::invalid_argument("D_sr: h input width must equal f1 + f2 + g output widths");
}

std::size_t PairSurrogateDiscriminator::param_count() const {
  return f1.param_count() + f2.param_count() + g.param_count() + h.param_count();
}

std::string PairSurrogateDiscriminator::describe() const {
  return "dsr(f1=" + f1.describe() + ",f2=" + f2.describe() + ",g=" + g.describe() +
         ",h=" + h.describe() + ")";
}

void SdeGenerator::validate() const {
  init_net.validate();
  if (init_net.input_width() != 1 || init_net.output_width() != 1)
    throw std::invalid_argument("SDE init_net must map R -> R");
  if (!(dt > 0)) throw std::invalid_argument("SDE dt must be positive");
}

std::string SdeGenerator::describe() const {
  std::ostringstream os;
  os << "sde(init=" << init_net.describe() << ",dt=" << dt << ")";
  return os.str();
}

Matrix AffineGenerator::mask() const {
  Matrix m = Matrix::Zero(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      if (i == j || (pattern == AffinePattern::UpperTriangular && j > i)) m(i, j) = 1.0;
  return m;
}

std::size_t AffineGenerator::degrees_of_freedom() const {
  return static_cast<std::size_t>(mask().sum()) + static_cast<std::size_t>(dim);
}

std::string AffineGenerator::describe() const {
  return std::string("affine(") + std::to_string(dim) + "," +
         (pattern == AffinePattern::Diagonal ? "diag" : "upper") + ")";
}

// ---------------------------------------------------------------- init

ParamStore init_params(const MlpSpec& spec, Rng& rng, const InitOptions& opts) {
  spec.validate();
  ParamStore store;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double bound = spec.activation == Activation::Tanh ? std::sqrt(6.0 / (in + out))
                                                             : std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> uni(-bound, bound);
    Matrix w(in, out);
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j) w(i, j) = uni(rng);
    if (opts.zero_final_layer && l + 1 == spec.layer_count()) w.setZero();
    store.entries.push_back({std::to_string(l) + ".weight", std::move(w)});
    store.entries.push_back({std::to_string(l) + ".bias", Matrix::Zero(1, out)});
  }
  return store;
}

ParamStore init_params(const MeasureConditionalDiscriminator& spec, Rng& rng, const InitOptions& opts) {
  spec.validate();
  ParamStore store;
  store.append(init_params(spec.f, rng), "f.");
  store.append(init_params(spec.g, rng), "g.");
  store.append(init_params(spec.h, rng, opts), "h.");
  return store;
}

ParamStore init_params(const PairSurrogateDiscriminator& spec, Rng& rng, const InitOptions& opts) {
  spec.validate();
  ParamStore store;
  store.append(init_params(spec.f1, rng), "f1.");
  store.append(init_params(spec.f2, rng), "f2.");
  store.append(init_params(spec.g, rng), "g.");
  store.append(init_params(spec.h, rng, opts), "h.");
  return store;
}

ParamStore init_params(const SdeGenerator& spec, Rng& rng, const InitOptions& opts) {
  spec.validate();
  ParamStore store;
  store.append(init_params(spec.init_net, rng, opts), "init.");
  for (const char* name : {"a0", "a1", "a2", "a3", "raw_sigma"})
    store.entries.push_back({name, Matrix::Zero(1, 1)});
  return store;
}

ParamStore init_params(const AffineGenerator& spec) {
  ParamStore store;
  store.entries.push_back({"A", Matrix::Identity(spec.dim, spec.dim)});
  store.entries.push_back({"b", Matrix::Zero(1, spec.dim)});
  return store;
}

// ---------------------------------------------------------------- apply

namespace {

NodeId activate(Graph& graph, Activation a, NodeId x) {
  switch (a) {
    case Activation::Relu: return graph.relu(x);
    case Activation::LeakyRelu: return graph.leaky_relu(x);
    case Activation::Tanh: return graph.tanh(x);
  }
  return x;
}

void expect_params(std::span<const NodeId> params, std::size_t n, const char* who) {
  if (params.size() != n)
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(n) +
                                " parameter arrays, got " + std::to_string(params.size()));
}

}  // namespace

NodeId mlp_apply(Graph& graph, const MlpSpec& spec, std::span<const NodeId> params, NodeId x) {
  expect_params(params, 2 * spec.layer_count(), "mlp_apply");
  if (graph.cols(x) != spec.input_width())
    throw GraphError("mlp input width mismatch", x.index);
  NodeId h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = graph.add_row(graph.matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < spec.layer_count()) h = activate(graph, spec.activation, h);
  }
  switch (spec.output) {
    case OutputActivation::None: break;
    case OutputActivation::Sigmoid: h = graph.sigmoid(h); break;
    case OutputActivation::Softplus: h = graph.softplus(h); break;
  }
  return h;
}

NodeId pooled_features(Graph& graph, const MlpSpec& encoder, std::span<const NodeId> params,
                       NodeId samples) {
  if (graph.rows(samples) < 1) throw std::invalid_argument("empty sample set");
  return graph.mean_rows(mlp_apply(graph, encoder, params, samples));
}

NodeId dmc_apply(Graph& graph, const MeasureConditionalDiscriminator& spec,
                 std::span<const NodeId> params, NodeId x, NodeId measure) {
  const std::size_t nf = 2 * spec.f.layer_count();
  const std::size_t ng = 2 * spec.g.layer_count();
  const std::size_t nh = 2 * spec.h.layer_count();
  expect_params(params, nf + ng + nh, "dmc_apply");
  const NodeId pooled = pooled_features(graph, spec.f, params.subspan(0, nf), measure);
  return dmc_apply_pooled(graph, spec, params, x, pooled);
}

NodeId dmc_apply_pooled(Graph& graph, const MeasureConditionalDiscriminator& spec,
                        std::span<const NodeId> params, NodeId x, NodeId pooled) {
  const std::size_t nf = 2 * spec.f.layer_count();
  const std::size_t ng = 2 * spec.g.layer_count();
  const std::size_t nh = 2 * spec.h.layer_count();
  expect_params(params, nf + ng + nh, "dmc_apply");
  const NodeId gx = mlp_apply(graph, spec.g, params.subspan(nf, ng), x);
  const NodeId joint = graph.concat_cols(graph.broadcast_rows(pooled, graph.rows(x)), gx);
  return mlp_apply(graph, spec.h, params.subspan(nf + ng, nh), joint);
}

std::vector<SubnetRanges> subnet_ranges(const PairSurrogateDiscriminator& spec) {
  const std::size_t n1 = 2 * spec.f1.layer_count();
  const std::size_t n2 = 2 * spec.f2.layer_count();
  const std::size_t ng = 2 * spec.g.layer_count();
  const std::size_t nh = 2 * spec.h.layer_count();
  return {{0, n1}, {n1, n2}, {n1 + n2, ng}, {n1 + n2 + ng, nh}};
}

NodeId dsr_apply_pooled(Graph& graph, const PairSurrogateDiscriminator& spec,
                        std::span<const NodeId> params, NodeId x, NodeId pooled_p, NodeId pooled_q) {
  const auto r = subnet_ranges(spec);
  expect_params(params, r[3].offset + r[3].count, "dsr_apply");
  const NodeId gx = mlp_apply(graph, spec.g, params.subspan(r[2].offset, r[2].count), x);
  const auto n = graph.rows(x);
  const NodeId pq = graph.concat_cols(graph.broadcast_rows(pooled_p, n), graph.broadcast_rows(pooled_q, n));
  return mlp_apply(graph, spec.h, params.subspan(r[3].offset, r[3].count), graph.concat_cols(pq, gx));
}

NodeId dsr_apply(Graph& graph, const PairSurrogateDiscriminator& spec,
                 std::span<const NodeId> params, NodeId x, NodeId samples_p, NodeId samples_q) {
  const auto r = subnet_ranges(spec);
  expect_params(params, r[3].offset + r[3].count, "dsr_apply");
  const NodeId pp = pooled_features(graph, spec.f1, params.subspan(r[0].offset, r[0].count), samples_p);
  const NodeId pq = pooled_features(graph, spec.f2, params.subspan(r[1].offset, r[1].count), samples_q);
  return dsr_apply_pooled(graph, spec, params, x, pp, pq);
}

std::map<double, NodeId> sde_simulate(Graph& graph, const SdeGenerator& spec,
                                      std::span<const NodeId> params, Eigen::Index n,
                                      std::span<const double> times, Rng& rng,
                                      const SdeOptions& opts) {
  spec.validate();
  const std::size_t ni = 2 * spec.init_net.layer_count();
  expect_params(params, ni + 5, "sde_simulate");
  std::vector<long> step_of;
  long last = 0;
  for (double t : times) {
    if (!(t > 0)) throw std::invalid_argument("observation times must be positive");
    const double k = t / spec.dt;
    const long steps = std::lround(k);
    if (std::abs(k - static_cast<double>(steps)) > 1e-9 * std::max(1.0, k))
      throw std::invalid_argument("observation time " + std::to_string(t) + " is not a multiple of dt");
    step_of.push_back(steps);
    last = std::max(last, steps);
  }
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("observation times must be sorted");

  NodeId x;
  if (opts.initial) {
    if (opts.initial->rows() != n || opts.initial->cols() != 1)
      throw std::invalid_argument("initial particles must be (n, 1)");
    x = graph.constant(*opts.initial);
  } else {
    x = mlp_apply(graph, spec.init_net, params.subspan(0, ni), graph.constant(standard_normal(rng, n, 1)));
  }
  const NodeId a0 = params[ni + 0];
  const NodeId a1 = params[ni + 1];
  const NodeId a2 = params[ni + 2];
  const NodeId a3 = params[ni + 3];
  const NodeId sigma = graph.softplus(params[ni + 4]);
  const double sqrt_dt = std::sqrt(spec.dt);

  std::map<double, NodeId> out;
  std::size_t next = 0;
  for (long k = 1; k <= last; ++k) {
    const NodeId x2 = graph.mul(x, x);
    const NodeId x3 = graph.mul(x2, x);
    NodeId drift = graph.add_row(graph.matmul(x, a1), a0);
    drift = graph.add(drift, graph.matmul(x2, a2));
    drift = graph.add(drift, graph.matmul(x3, a3));
    NodeId next_x = graph.add(x, graph.scale(drift, spec.dt));
    if (!opts.zero_noise) {
      const NodeId xi = graph.constant(standard_normal(rng, n, 1) * sqrt_dt);
      next_x = graph.add(next_x, graph.matmul(xi, sigma));
    }
    x = next_x;
    while (next < times.size() && step_of[next] == k) out[times[next++]] = x;
  }
  return out;
}

std::array<double, 5> sde_coefficients(const ParamStore& params) {
  const double raw = params.at("raw_sigma")(0, 0);
  const double sigma = std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw)));
  return {params.at("a0")(0, 0), params.at("a1")(0, 0), params.at("a2")(0, 0), params.at("a3")(0, 0), sigma};
}

NodeId generator_sample(Graph& graph, const MlpSpec& spec, std::span<const NodeId> params,
                        Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("generator_sample needs n >= 1");
  return mlp_apply(graph, spec, params, graph.constant(standard_normal(rng, n, spec.input_width())));
}

NodeId generator_sample(Graph& graph, const AffineGenerator& spec, std::span<const NodeId> params,
                        Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("generator_sample needs n >= 1");
  expect_params(params, 2, "affine generator");
  const NodeId a = graph.mul(params[0], graph.constant(spec.mask()));
  const NodeId z = graph.constant(standard_normal(rng, n, spec.dim));
  return graph.add_row(graph.matmul(z, graph.transpose(a)), params[1]);
}

// ---------------------------------------------------------------- architectures

namespace arch {

MlpSpec generator_2d() { return {{2, 128, 128, 128, 2}, Activation::Relu}; }
MlpSpec vanilla_discriminator_2d() { return {{2, 128, 128, 128, 1}, Activation::Relu}; }
MeasureConditionalDiscriminator dmc_2d() {
  return {{{2, 128, 64}, Activation::Relu}, {{2, 128, 64}, Activation::Relu}, {{128, 128, 1}, Activation::Relu}};
}

MlpSpec sde_init_net() { return {{1, 128, 128, 128, 1}, Activation::Tanh}; }
MlpSpec vanilla_discriminator_sde() { return {{1, 128, 128, 128, 128, 1}, Activation::LeakyRelu}; }
MeasureConditionalDiscriminator dmc_sde() {
  return {{{1, 128, 64}, Activation::LeakyRelu},
          {{1, 128, 64}, Activation::LeakyRelu},
          {{128, 128, 128, 1}, Activation::LeakyRelu}};
}
PairSurrogateDiscriminator dsr_sde() {
  const MlpSpec enc{{1, 128, 64}, Activation::LeakyRelu};
  return {enc, enc, enc, {{192, 128, 128, 1}, Activation::LeakyRelu}};
}

PairSurrogateDiscriminator dsr_kl(int dim) {
  const int hidden = dim == 2 ? 32 : 128;
  const int feat = dim == 2 ? 8 : 32;
  const MlpSpec enc{{dim, hidden, hidden, feat}, Activation::Tanh};
  return {enc, enc, enc, {{3 * feat, hidden, hidden, 1}, Activation::Tanh}};
}

PairSurrogateDiscriminator dsr_ot_map(int dim) {
  const MlpSpec enc{{dim, 64, 64, 16}, Activation::Tanh};
  return {enc, enc, enc, {{48, 64, 64, dim}, Activation::Tanh}};
}

PairSurrogateDiscriminator dsr_ot_dual(int dim) {
  const MlpSpec enc{{dim, 64, 64, 16}, Activation::Tanh};
  return {enc, enc, enc, {{48, 64, 64, 1}, Activation::Tanh}};
}

}  // namespace arch

}  // namespace mcgan
