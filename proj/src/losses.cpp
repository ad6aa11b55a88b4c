#include "mcgan/losses.hpp"

#include <stdexcept>

namespace mcgan {

void GanLossKind::validate() const {
  if (type == Type::WganClip && !(clip > 0)) throw std::invalid_argument("WganClip: clip bound must be positive");
  if (type == Type::WganGp && !(lambda >= 0)) throw std::invalid_argument("WganGp: lambda must be >= 0");
}

std::string to_string(const GanLossKind& k) {
  switch (k.type) {
    case GanLossKind::Type::VanillaGan: return "vanilla";
    case GanLossKind::Type::WganClip: return "wgan-clip";
    case GanLossKind::Type::WganGp: return "wgan-gp";
  }
  return "?";
}

GanLossKind gan_loss_from_string(const std::string& s, double clip, double lambda) {
  GanLossKind k;
  if (s == "vanilla")
    k = GanLossKind::vanilla();
  else if (s == "wgan-clip")
    k = GanLossKind::wgan_clip(clip);
  else if (s == "wgan-gp")
    k = GanLossKind::wgan_gp(lambda);
  else
    throw std::invalid_argument("unknown GAN loss: " + s);
  k.validate();
  return k;
}

LossPair gan_losses(Graph& graph, const GanLossKind& kind, const DiscriminatorFn& d, NodeId gen_samples,
                    NodeId real_samples, Rng& rng, const GanLossOptions& opts) {
  kind.validate();
  if (graph.rows(gen_samples) < 1 || graph.rows(real_samples) < 1)
    throw std::invalid_argument("gan_losses: empty sample set");
  if (graph.cols(gen_samples) != graph.cols(real_samples))
    throw std::invalid_argument("gan_losses: dimension mismatch");
  const NodeId d_real = d(graph, real_samples);
  const NodeId d_gen = d(graph, gen_samples);
  LossPair out;
  NodeId value;
  if (kind.type == GanLossKind::Type::VanillaGan) {
    // log sigmoid(l) = -softplus(-l); log(1 - sigmoid(l)) = -softplus(l).
    const NodeId log_d_real = graph.neg(graph.softplus(graph.neg(d_real)));
    const NodeId log_1m_d_gen = graph.neg(graph.softplus(d_gen));
    value = graph.add(graph.mean(log_d_real), graph.mean(log_1m_d_gen));
  } else {
    value = graph.sub(graph.mean(d_real), graph.mean(d_gen));
  }
  out.generator_loss = value;
  out.discriminator_loss = graph.neg(value);
  if (kind.type == GanLossKind::Type::WganGp && opts.build_penalty) {
    const Matrix& real = graph.value(real_samples);
    const Matrix& gen = graph.value(gen_samples);
    if (real.rows() != gen.rows()) throw std::invalid_argument("gan_losses: penalty needs equal batch sizes");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x_hat(real.rows(), real.cols());
    for (Eigen::Index i = 0; i < real.rows(); ++i) {
      const double alpha = u(rng);
      x_hat.row(i) = alpha * real.row(i) + (1.0 - alpha) * gen.row(i);
    }
    const NodeId xh = graph.leaf(std::move(x_hat));
    out.penalty = gradient_penalty(graph, d(graph, xh), xh);
    out.discriminator_loss = graph.add(out.discriminator_loss, graph.scale(out.penalty, kind.lambda));
  }
  return out;
}

std::string to_string(ToyVariant v) { return v == ToyVariant::Vanilla ? "vanilla" : "mc"; }

ToyVariant toy_variant_from_string(const std::string& s) {
  if (s == "vanilla") return ToyVariant::Vanilla;
  if (s == "mc" || s == "measure_conditional") return ToyVariant::MeasureConditional;
  throw std::invalid_argument("unknown toy variant: " + s);
}

double toy_game_value(ToyVariant variant, const Eigen::VectorXd& w, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& v) {
  if (w.size() != theta.size() || w.size() != v.size()) throw std::invalid_argument("toy_game_value: dimension mismatch");
  const Eigen::VectorXd diff = v - theta;
  if (variant == ToyVariant::Vanilla) return w.dot(diff);
  return w.dot(diff.cwiseProduct(diff));
}

ToyBatch sample_toy_batch(int dim, Eigen::Index n, Rng& rng) {
  ToyBatch b;
  b.xi = standard_normal(rng, n, dim);
  b.zeta = standard_normal(rng, n, dim);
  return b;
}

LossPair toy_empirical_losses(Graph& graph, ToyVariant variant, NodeId w, NodeId theta, const Eigen::VectorXd& v,
                              const ToyBatch& batch) {
  if (batch.xi.rows() < 1 || batch.zeta.rows() < 1) throw std::invalid_argument("toy_empirical_losses: empty batch");
  const Eigen::Index d = v.size();
  if (graph.cols(w) != d || graph.cols(theta) != d || batch.xi.cols() != d || batch.zeta.cols() != d)
    throw std::invalid_argument("toy_empirical_losses: dimension mismatch");
  // D is linear, so E[D(x)] = D(E[x]); reduce the batch first.
  const Matrix real_mean = batch.xi.colwise().mean() + v.transpose();
  const NodeId mean_real = graph.constant(real_mean);
  const NodeId mean_gen = graph.add(theta, graph.constant(batch.zeta.colwise().mean()));
  const NodeId diff = graph.sub(mean_real, mean_gen);
  NodeId weight = w;
  if (variant == ToyVariant::MeasureConditional) weight = graph.mul(w, diff);
  const NodeId value = graph.sum(graph.mul(weight, diff));
  return {value, graph.neg(value), NodeId{}};
}

NodeId kl_surrogate_loss(Graph& graph, const PairSurrogateDiscriminator& spec, std::span<const NodeId> params,
                         NodeId samples_p, NodeId samples_q) {
  if (graph.rows(samples_p) < 1 || graph.rows(samples_q) < 1)
    throw std::invalid_argument("kl_surrogate_loss: empty sample set");
  const auto ranges = subnet_ranges(spec);
  const NodeId pooled_p = pooled_features(graph, spec.f1, params.subspan(ranges[0].offset, ranges[0].count), samples_p);
  const NodeId pooled_q = pooled_features(graph, spec.f2, params.subspan(ranges[1].offset, ranges[1].count), samples_q);
  const NodeId d_p = dsr_apply_pooled(graph, spec, params, samples_p, pooled_p, pooled_q);
  const NodeId d_q = dsr_apply_pooled(graph, spec, params, samples_q, pooled_p, pooled_q);
  return graph.add_const(graph.sub(graph.mean(d_p), graph.mean(graph.exp(d_q))), 1.0);
}

MultiTargetLosses multi_target_losses(Graph& graph, const GanLossKind& kind,
                                      const std::map<double, DiscriminatorFn>& discriminators,
                                      const std::map<double, NodeId>& generated,
                                      const std::map<double, NodeId>& targets, Rng& rng,
                                      const GanLossOptions& opts) {
  if (discriminators.empty()) throw std::invalid_argument("multi_target_losses: no time instants");
  if (discriminators.size() != targets.size() || discriminators.size() != generated.size())
    throw std::invalid_argument("multi_target_losses: time keys differ");
  MultiTargetLosses out;
  for (const auto& [t, d] : discriminators) {
    const auto target = targets.find(t);
    const auto gen = generated.find(t);
    if (target == targets.end() || gen == generated.end())
      throw std::invalid_argument("multi_target_losses: time keys differ at t=" + std::to_string(t));
    const LossPair pair = gan_losses(graph, kind, d, gen->second, target->second, rng, opts);
    out.per_time[t] = pair;
    out.generator_loss = out.generator_loss.valid() ? graph.add(out.generator_loss, pair.generator_loss)
                                                    : pair.generator_loss;
    out.shared_discriminator_loss = out.shared_discriminator_loss.valid()
                                        ? graph.add(out.shared_discriminator_loss, pair.discriminator_loss)
                                        : pair.discriminator_loss;
  }
  return out;
}

OtLosses ot_surrogate_losses(Graph& graph, const PairSurrogateDiscriminator& map_spec,
                             std::span<const NodeId> map_params, const PairSurrogateDiscriminator& dual_spec,
                             std::span<const NodeId> dual_params,
                             const std::vector<std::pair<NodeId, NodeId>>& pairs, double eps, bool build_map) {
  if (!(eps > 0)) throw std::invalid_argument("ot_surrogate_losses: eps must be positive");
  if (pairs.empty()) throw std::invalid_argument("ot_surrogate_losses: no pairs");
  if (map_spec.output_dim() != map_spec.data_dim())
    throw std::invalid_argument("ot_surrogate_losses: map output width must equal data dimension");
  const auto dual_ranges = subnet_ranges(dual_spec);
  const auto map_ranges = subnet_ranges(map_spec);
  NodeId l_d, l_g;
  for (const auto& [x, y] : pairs) {
    if (graph.cols(x) != graph.cols(y)) throw std::invalid_argument("ot_surrogate_losses: dimension mismatch");
    const Eigen::Index n = graph.rows(x), m = graph.rows(y);
    // The expectations run over x ~ P, y ~ Q independently; every (x_i, y_j)
    // combination is used, so the terms below are n x m matrices.
    const Matrix xv = graph.value(x);
    const Matrix yv = graph.value(y);
    Matrix cost(n, m);
    for (Eigen::Index j = 0; j < m; ++j) cost.col(j) = (xv.rowwise() - yv.row(j)).rowwise().squaredNorm();
    const NodeId c = graph.constant(std::move(cost));

    // Dual potentials: u(x) = D(P, Q, x), v(y) = D(Q, P, y). f1 encodes the
    // first measure and f2 the second, so the pooled features swap roles.
    const NodeId f1_p = pooled_features(graph, dual_spec.f1, dual_params.subspan(dual_ranges[0].offset, dual_ranges[0].count), x);
    const NodeId f2_q = pooled_features(graph, dual_spec.f2, dual_params.subspan(dual_ranges[1].offset, dual_ranges[1].count), y);
    const NodeId f1_q = pooled_features(graph, dual_spec.f1, dual_params.subspan(dual_ranges[0].offset, dual_ranges[0].count), y);
    const NodeId f2_p = pooled_features(graph, dual_spec.f2, dual_params.subspan(dual_ranges[1].offset, dual_ranges[1].count), x);
    const NodeId u = dsr_apply_pooled(graph, dual_spec, dual_params, x, f1_p, f2_q);
    const NodeId v = dsr_apply_pooled(graph, dual_spec, dual_params, y, f1_q, f2_p);
    const NodeId hinge = graph.relu(graph.sub(graph.add(graph.broadcast_cols(u, m), graph.broadcast_rows(graph.transpose(v), n)), c));
    const NodeId pair_d = graph.add(graph.neg(graph.add(graph.mean(u), graph.mean(v))),
                                    graph.scale(graph.mean(graph.mul(hinge, hinge)), 1.0 / (4.0 * eps)));
    l_d = l_d.valid() ? graph.add(l_d, pair_d) : pair_d;
    if (!build_map) continue;

    // c(y_j, T(x_i)) = |T_i|^2 + |y_j|^2 - 2 T_i . y_j
    const NodeId m1 = pooled_features(graph, map_spec.f1, map_params.subspan(map_ranges[0].offset, map_ranges[0].count), x);
    const NodeId m2 = pooled_features(graph, map_spec.f2, map_params.subspan(map_ranges[1].offset, map_ranges[1].count), y);
    const NodeId tx = dsr_apply_pooled(graph, map_spec, map_params, x, m1, m2);
    const Matrix y_norms = yv.rowwise().squaredNorm().transpose();
    const NodeId map_cost = graph.add(graph.add_row(graph.broadcast_cols(graph.squared_norm_rows(tx), m), graph.constant(y_norms)),
                                      graph.scale(graph.matmul(tx, graph.constant(yv.transpose())), -2.0));
    const NodeId pair_g = graph.scale(graph.mean(graph.mul(map_cost, hinge)), 1.0 / (2.0 * eps));
    l_g = l_g.valid() ? graph.add(l_g, pair_g) : pair_g;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  return {graph.scale(l_d, inv), build_map ? graph.scale(l_g, inv) : NodeId{}};
}

}  // namespace mcgan
