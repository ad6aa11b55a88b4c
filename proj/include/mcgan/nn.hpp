#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mcgan/autodiff.hpp"

namespace mcgan {

using Rng = std::mt19937_64;

/// n x d matrix of i.i.d. standard normals, filled row by row.
Matrix standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

enum class Activation { Relu, LeakyRelu, Tanh };
enum class OutputActivation { None, Sigmoid, Softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Dense feed-forward network. `widths` lists input, hidden and output widths.
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::Relu;
  OutputActivation output = OutputActivation::None;

  void validate() const;
  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t param_count() const;
  std::string describe() const;
};

/// Named parameter arrays. Order is significant: it matches the order in
/// which the owning network consumes them.
struct ParamStore {
  struct Entry {
    std::string name;
    Matrix value;
  };
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count() const;
  std::size_t index_of(const std::string& name) const;
  const Matrix& at(const std::string& name) const { return entries[index_of(name)].value; }
  Matrix& at(const std::string& name) { return entries[index_of(name)].value; }
  void append(const ParamStore& other, const std::string& prefix = "");
  /// FNV-1a hash over names and raw bytes; used to audit parameter changes.
  std::uint64_t hash() const;
};

/// Leaves of a ParamStore inside one graph, aligned with its entries.
struct BoundParams {
  std::vector<NodeId> ids;
  std::span<const NodeId> span() const { return ids; }
  std::span<const NodeId> slice(std::size_t offset, std::size_t count) const {
    return std::span<const NodeId>(ids).subspan(offset, count);
  }
};

BoundParams bind_params(Graph& graph, const ParamStore& params);

/// Per-sample discriminator: D(x). Kept as a plain MLP.
using VanillaDiscriminator = MlpSpec;

/// D(x, P) = h(mean_i f(y_i), g(x)).
struct MeasureConditionalDiscriminator {
  MlpSpec f, g, h;

  void validate() const;
  std::size_t param_count() const;
  std::string describe() const;
};

/// D(x, P, Q) = h(mean_i f1(y_i^P), mean_j f2(y_j^Q), g(x)).
struct PairSurrogateDiscriminator {
  MlpSpec f1, f2, g, h;

  void validate() const;
  std::size_t param_count() const;
  int data_dim() const { return g.input_width(); }
  int output_dim() const { return h.output_width(); }
  std::string describe() const;
};

/// Euler-Maruyama simulator for dx = (a0 + a1 x + a2 x^2 + a3 x^3) dt + sigma dW
/// with x(0) = init_net(z), z ~ N(0, 1). sigma = softplus(raw_sigma).
struct SdeGenerator {
  MlpSpec init_net;
  double dt = 0.01;

  void validate() const;
  std::size_t param_count() const { return init_net.param_count() + 5; }
  std::string describe() const;
};

enum class AffinePattern { Diagonal, UpperTriangular };

/// G(z) = A z + b with A restricted to a sparsity pattern.
struct AffineGenerator {
  int dim = 2;
  AffinePattern pattern = AffinePattern::Diagonal;

  Matrix mask() const;
  std::size_t degrees_of_freedom() const;
  std::string describe() const;
};

struct InitOptions {
  /// Zero the last layer of every output network (h for set encoders).
  bool zero_final_layer = false;
};

ParamStore init_params(const MlpSpec& spec, Rng& rng, const InitOptions& opts = {});
ParamStore init_params(const MeasureConditionalDiscriminator& spec, Rng& rng, const InitOptions& opts = {});
ParamStore init_params(const PairSurrogateDiscriminator& spec, Rng& rng, const InitOptions& opts = {});
ParamStore init_params(const SdeGenerator& spec, Rng& rng, const InitOptions& opts = {});
/// Identity A and zero b.
ParamStore init_params(const AffineGenerator& spec);

NodeId mlp_apply(Graph& graph, const MlpSpec& spec, std::span<const NodeId> params, NodeId x);

/// x: (n, d) query points; measure: (m, d) samples of P. Returns (n, 1).
NodeId dmc_apply(Graph& graph, const MeasureConditionalDiscriminator& spec,
                 std::span<const NodeId> params, NodeId x, NodeId measure);

/// dmc_apply with the measure already pooled through f: (1, f width).
NodeId dmc_apply_pooled(Graph& graph, const MeasureConditionalDiscriminator& spec,
                        std::span<const NodeId> params, NodeId x, NodeId pooled);

/// Returns (n, output_dim).
NodeId dsr_apply(Graph& graph, const PairSurrogateDiscriminator& spec,
                 std::span<const NodeId> params, NodeId x, NodeId samples_p, NodeId samples_q);

/// Pooled set features, reusable across many query batches: (1, width).
NodeId pooled_features(Graph& graph, const MlpSpec& encoder, std::span<const NodeId> params,
                       NodeId samples);

/// dsr_apply with P and Q already pooled.
NodeId dsr_apply_pooled(Graph& graph, const PairSurrogateDiscriminator& spec,
                        std::span<const NodeId> params, NodeId x, NodeId pooled_p, NodeId pooled_q);

/// Parameter-index ranges of the sub-networks inside a composite store.
struct SubnetRanges {
  std::size_t offset;
  std::size_t count;
};
std::vector<SubnetRanges> subnet_ranges(const PairSurrogateDiscriminator& spec);

struct SdeOptions {
  /// Replace every Brownian increment by zero.
  bool zero_noise = false;
  /// Use these (n, 1) initial particles instead of init_net(z).
  std::optional<Matrix> initial;
};

/// Simulates n particles and returns the particle node at each requested time.
std::map<double, NodeId> sde_simulate(Graph& graph, const SdeGenerator& spec,
                                      std::span<const NodeId> params, Eigen::Index n,
                                      std::span<const double> times, Rng& rng,
                                      const SdeOptions& opts = {});

/// Current (a0, a1, a2, a3, sigma) read from a store.
std::array<double, 5> sde_coefficients(const ParamStore& params);

NodeId generator_sample(Graph& graph, const MlpSpec& spec, std::span<const NodeId> params,
                        Eigen::Index n, Rng& rng);
NodeId generator_sample(Graph& graph, const AffineGenerator& spec, std::span<const NodeId> params,
                        Eigen::Index n, Rng& rng);

// Reference architectures used by the experiments.
namespace arch {
MlpSpec generator_2d();
MlpSpec vanilla_discriminator_2d();
MeasureConditionalDiscriminator dmc_2d();
MlpSpec sde_init_net();
MlpSpec vanilla_discriminator_sde();
MeasureConditionalDiscriminator dmc_sde();
PairSurrogateDiscriminator dsr_sde();
PairSurrogateDiscriminator dsr_kl(int dim);
/// Map network for the transport surrogate; output width equals `dim`.
PairSurrogateDiscriminator dsr_ot_map(int dim);
/// Dual potential network for the transport surrogate.
PairSurrogateDiscriminator dsr_ot_dual(int dim);
}  // namespace arch

}  // namespace mcgan
