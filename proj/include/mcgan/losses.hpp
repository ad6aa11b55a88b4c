#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcgan/nn.hpp"

namespace mcgan {

struct GanLossKind {
  enum class Type { VanillaGan, WganClip, WganGp };
  Type type = Type::WganGp;
  double clip = 0.01;
  double lambda = 10.0;

  static GanLossKind vanilla() { return {Type::VanillaGan, 0.01, 0.0}; }
  static GanLossKind wgan_clip(double c) { return {Type::WganClip, c, 0.0}; }
  static GanLossKind wgan_gp(double lambda = 10.0) { return {Type::WganGp, 0.01, lambda}; }

  void validate() const;
  bool is_wgan() const { return type != Type::VanillaGan; }
};

std::string to_string(const GanLossKind& k);
/// "vanilla", "wgan-clip", "wgan-gp".
GanLossKind gan_loss_from_string(const std::string& s, double clip = 0.01, double lambda = 10.0);

/// Both losses are to be minimized by their respective players.
struct LossPair {
  NodeId generator_loss;
  NodeId discriminator_loss;
  /// Unweighted gradient penalty (WganGp only).
  NodeId penalty;
};

/// Evaluates D at query points (n, d), returning (n, 1). For a
/// measure-conditional D the closure holds the measure-channel node.
using DiscriminatorFn = std::function<NodeId(Graph&, NodeId)>;

struct GanLossOptions {
  /// Skip the penalty (e.g. when only the generator loss is needed).
  bool build_penalty = true;
};

/// V = E_real[log D] + E_gen[log(1 - D)] (D = sigmoid of the output) or
/// V = E_real[D] - E_gen[D] for the Wasserstein kinds.
/// generator_loss = V, discriminator_loss = -V (+ lambda * penalty).
LossPair gan_losses(Graph& graph, const GanLossKind& kind, const DiscriminatorFn& d, NodeId gen_samples,
                    NodeId real_samples, Rng& rng, const GanLossOptions& opts = {});

enum class ToyVariant { Vanilla, MeasureConditional };
std::string to_string(ToyVariant v);
ToyVariant toy_variant_from_string(const std::string& s);

/// vanilla: <w, v - theta>; measure-conditional: sum_i w_i (v_i - theta_i)^2.
double toy_game_value(ToyVariant variant, const Eigen::VectorXd& w, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& v);

/// Paired noise for the toy game: real = v + xi, generated = theta + zeta.
struct ToyBatch {
  Matrix xi;
  Matrix zeta;
};

ToyBatch sample_toy_batch(int dim, Eigen::Index n, Rng& rng);

/// Empirical toy losses with linear D(x) = <w, x> (vanilla) or
/// D(x) = <w * (mean_real - mean_gen), x> (measure-conditional).
/// `w` and `theta` are (1, d) leaves; `v` is the ground truth.
LossPair toy_empirical_losses(Graph& graph, ToyVariant variant, NodeId w, NodeId theta,
                              const Eigen::VectorXd& v, const ToyBatch& batch);

/// l_KL = mean_P D - mean_Q exp(D) + 1, with D conditioned on (P, Q).
NodeId kl_surrogate_loss(Graph& graph, const PairSurrogateDiscriminator& spec, std::span<const NodeId> params,
                         NodeId samples_p, NodeId samples_q);

struct MultiTargetLosses {
  std::map<double, LossPair> per_time;
  /// Sum over times of the generator losses.
  NodeId generator_loss;
  /// Sum over times of the discriminator losses (the loss of a shared D).
  NodeId shared_discriminator_loss;
};

/// Per-time GAN losses between generated and target marginals.
MultiTargetLosses multi_target_losses(Graph& graph, const GanLossKind& kind,
                                      const std::map<double, DiscriminatorFn>& discriminators,
                                      const std::map<double, NodeId>& generated,
                                      const std::map<double, NodeId>& targets, Rng& rng,
                                      const GanLossOptions& opts = {});

inline constexpr double kOtEpsilon = 0.02;

struct OtLosses {
  NodeId discriminator_loss;
  NodeId generator_loss;
};

/// Regularized-OT dual (L_D) and barycentric map (L_G) losses averaged over
/// (P, Q) sample sets. The expectations over x ~ P, y ~ Q use every (x_i, y_j)
/// combination, so the two sets may differ in size. With `build_map` false
/// only the dual loss is built.
OtLosses ot_surrogate_losses(Graph& graph, const PairSurrogateDiscriminator& map_spec,
                             std::span<const NodeId> map_params, const PairSurrogateDiscriminator& dual_spec,
                             std::span<const NodeId> dual_params,
                             const std::vector<std::pair<NodeId, NodeId>>& pairs, double eps = kOtEpsilon,
                             bool build_map = true);

}  // namespace mcgan
