#include "mcgan/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mcgan/checkpoint.hpp"

namespace mcgan {

// ---------------------------------------------------------------- config

namespace {

std::string format_value(const std::string& s) { return s; }
std::string format_value(long v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string format_value(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_value(v[i]);
  return out;
}

void parse_value(const std::string& key, const std::string& s, std::string& out) {
  if (s.empty()) {
    out.clear();
    return;
  }
  (void)key;
  out = s;
}

void parse_value(const std::string& key, const std::string& s, long& out) {
  std::size_t pos = 0;
  try {
    out = std::stol(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw std::invalid_argument("config: " + key + " expects an integer, got '" + s + "'");
}

void parse_value(const std::string& key, const std::string& s, std::uint64_t& out) {
  std::size_t pos = 0;
  try {
    if (!s.empty() && s[0] != '-') out = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size())
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + s + "'");
}

void parse_value(const std::string& key, const std::string& s, double& out) {
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + s + "'");
}

void parse_value(const std::string& key, const std::string& s, std::vector<double>& out) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double x;
    parse_value(key, item, x);
    v.push_back(x);
  }
  if (v.empty()) throw std::invalid_argument("config: " + key + " expects a comma-separated list");
  out = std::move(v);
}

template <class F>
void visit_fields(TrainConfig& c, F&& f) {
  f("experiment", c.experiment);
  f("seed", c.seed);
  f("iters", c.iters);
  f("eval_every", c.eval_every);
  f("opt", c.opt);
  f("lr", c.lr);
  f("lr_d", c.lr_d);
  f("lr_coeff", c.lr_coeff);
  f("decay", c.decay);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("ratio", c.ratio);
  f("loss", c.loss);
  f("clip", c.clip);
  f("lambda", c.lambda);
  f("disc", c.disc);
  f("target", c.target);
  f("batch", c.batch);
  f("measure_batch", c.measure_batch);
  f("w1_samples", c.w1_samples);
  f("w1_reps", c.w1_reps);
  f("variant", c.variant);
  f("v", c.v);
  f("c", c.c);
  f("toy_batch", c.toy_batch);
  f("theta0", c.theta0);
  f("w0", c.w0);
  f("trajectory_every", c.trajectory_every);
  f("setup", c.setup);
  f("observations", c.observations);
  f("dt", c.dt);
  f("times", c.times);
  f("init_var", c.init_var);
  f("true_coeffs", c.true_coeffs);
  f("obs_seed", c.obs_seed);
  f("init_sigma", c.init_sigma);
  f("init_coeffs", c.init_coeffs);
  f("dim", c.dim);
  f("p_regime", c.p_regime);
  f("q_regime", c.q_regime);
  f("pair_batch", c.pair_batch);
  f("samples", c.samples);
  f("test_pairs", c.test_pairs);
  f("test_samples", c.test_samples);
  f("zero_final", c.zero_final);
  f("gen_setup", c.gen_setup);
  f("mode", c.mode);
  f("pretrained", c.pretrained);
  f("target_mean", c.target_mean);
  f("target_cov", c.target_cov);
  f("eps", c.eps);
  f("warmup", c.warmup);
  f("test_points", c.test_points);
}

Regime regime_from_string(const std::string& s) {
  if (s == "train") return Regime::Train;
  if (s == "test") return Regime::Test;
  throw std::invalid_argument("unknown regime: " + s);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TrainConfig::to_kv() const {
  std::vector<std::pair<std::string, std::string>> out;
  visit_fields(const_cast<TrainConfig&>(*this),
               [&](const char* key, const auto& field) { out.emplace_back(key, format_value(field)); });
  return out;
}

void TrainConfig::apply(const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(*this, [&](const char* k, auto& field) {
    if (key == k) {
      parse_value(key, value, field);
      found = true;
    }
  });
  if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(iters >= 0, "iters must be >= 0");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(ratio >= 1, "ratio must be >= 1");
  require(batch >= 1 && measure_batch >= 1, "batch sizes must be >= 1");
  require(w1_samples >= 1 && w1_reps >= 1, "w1_samples and w1_reps must be >= 1");
  require(lr >= 0 && lr_d >= 0 && lr_coeff >= 0, "learning rates must be >= 0");
  require(v.size() == theta0.size() && v.size() == w0.size(), "v, theta0 and w0 must have equal length");
  require(c > 0, "c must be positive");
  require(toy_batch >= 1, "toy_batch must be >= 1");
  require(trajectory_every >= 1, "trajectory_every must be >= 1");
  require(dt > 0, "dt must be positive");
  require(init_var > 0, "init_var must be positive");
  require(decay > 0 && decay <= 1, "decay must be in (0, 1]");
  require(init_sigma >= 0, "init_sigma must be >= 0");
  require(init_coeffs.size() == 4, "init_coeffs needs a0,a1,a2,a3");
  require(true_coeffs.size() == 5 && true_coeffs[4] > 0, "true_coeffs must be a0,a1,a2,a3,sigma with sigma > 0");
  require(observations >= 1, "observations must be >= 1");
  require(dim >= 1, "dim must be >= 1");
  require(pair_batch >= 1 && samples >= 1, "pair_batch and samples must be >= 1");
  require(test_pairs >= 1 && test_samples >= 2 && test_points >= 1, "test sizes must be positive");
  require(target_cov.size() == target_mean.size() * target_mean.size(), "target_cov must be d*d entries");
  require(eps > 0, "eps must be positive");
  require(warmup >= 0, "warmup must be >= 0");
  require(disc == "vanilla" || disc == "mc", "disc must be vanilla or mc");
  require(setup == "vanilla_multi_d" || setup == "dmc_multi_d" || setup == "dsr_single", "unknown setup " + setup);
  require(gen_setup == "diag4" || gen_setup == "tri5", "gen_setup must be diag4 or tri5");
  require(mode == "finetune" || mode == "frozen" || mode == "scratch", "mode must be finetune, frozen or scratch");
  regime_from_string(p_regime);
  regime_from_string(q_regime);
  target2d_from_string(target);
  toy_variant_from_string(variant);
  optimizer();
  gan_loss();
}

OptimizerConfig TrainConfig::optimizer(double rate) const {
  OptimizerConfig oc;
  oc.kind = optimizer_from_string(opt);
  oc.lr = rate < 0 ? lr : rate;
  oc.beta1 = beta1;
  oc.beta2 = beta2;
  Optimizer check(oc);  // validates ranges
  return oc;
}

GanLossKind TrainConfig::gan_loss() const { return gan_loss_from_string(loss, clip, lambda); }

TrainConfig default_config(const std::string& experiment) {
  TrainConfig c;
  c.experiment = experiment;
  if (experiment == "toy") {
    c.opt = "gd";
    c.lr = 0.01;
    c.iters = 20000;
  } else if (experiment == "gan2d") {
    // Field defaults already describe the 2D setup.
  } else if (experiment == "sde-infer") {
    c.ratio = 5;
    c.lr_d = 1e-3;
    c.lr_coeff = 1e-3;
    c.batch = 256;
    c.measure_batch = 256;
    c.iters = 4000;
    c.eval_every = 100;
    c.warmup = 200;
    c.decay = 0.01;
  } else if (experiment == "kl-surrogate") {
    c.lr = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.pair_batch = 20;
    c.samples = 250;
    c.iters = 12000;
    c.eval_every = 2000;
    c.decay = 0.1;
  } else if (experiment == "transfer") {
    c.lr = 1e-3;
    c.iters = 2000;
    c.eval_every = 100;
  } else if (experiment == "ot-surrogate") {
    c.lr = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.pair_batch = 4;
    c.samples = 256;
    c.warmup = 3000;
    c.iters = 15000;
    c.eval_every = 1500;
    c.decay = 0.1;
  } else {
    throw std::invalid_argument("unknown experiment: " + experiment);
  }
  return c;
}

// ---------------------------------------------------------------- records

std::vector<double> Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::invalid_argument("no column " + name);
  const std::size_t c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = at(r, c);
  return out;
}

void Table::add_row(const std::vector<double>& row) {
  if (row.size() != columns.size()) throw std::invalid_argument("table row width mismatch");
  data.insert(data.end(), row.begin(), row.end());
}

void Table::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << "\n" << std::setprecision(17);
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << at(r, c);
    out << "\n";
  }
}

const ParamStore& RunRecord::store(const std::string& name) const {
  for (const auto& [n, s] : params)
    if (n == name) return s;
  throw std::invalid_argument("run record has no parameters named " + name);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_finite(double v, const std::string& what, long step) {
  if (!std::isfinite(v))
    throw TrainingAborted("non-finite " + what + " at iteration " + std::to_string(step));
}

std::vector<Matrix> grads_of(const Graph& g, NodeId loss, const BoundParams& b) {
  return gradient(g, loss, b.span()).values;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Steps entries [begin, end) of `store` with `opt`.
void step_range(Optimizer& opt, ParamStore& store, const std::vector<Matrix>& grads, std::size_t begin,
                std::size_t end) {
  ParamStore part;
  part.entries.assign(store.entries.begin() + static_cast<std::ptrdiff_t>(begin),
                      store.entries.begin() + static_cast<std::ptrdiff_t>(end));
  const std::vector<Matrix> g(grads.begin() + static_cast<std::ptrdiff_t>(begin),
                              grads.begin() + static_cast<std::ptrdiff_t>(end));
  opt.step(part, g, Direction::Minimize);
  for (std::size_t i = begin; i < end; ++i) store.entries[i].value = std::move(part.entries[i - begin].value);
}

// Independent stream for evaluation so that metrics never perturb training.
// Linear learning-rate multiplier: 1 at iteration `start`, cfg.decay at the end.
double decay_factor(const TrainConfig& cfg, long it, long start) {
  if (cfg.decay >= 1 || it <= start) return 1.0;
  const double span = static_cast<double>(std::max(1L, cfg.iters - start - 1));
  return 1.0 + std::min(1.0, static_cast<double>(it - start) / span) * (cfg.decay - 1.0);
}

Rng eval_stream(std::uint64_t seed) { return Rng(seed ^ 0x9e3779b97f4a7c15ULL); }

template <class Body>
void guarded(RunRecord& rec, Body&& body) {
  const auto t0 = Clock::now();
  try {
    body();
  } catch (const TrainingAborted& e) {
    rec.aborted = true;
    rec.abort_reason = e.what();
  }
  rec.wall_seconds = seconds_since(t0);
}

}  // namespace

// ---------------------------------------------------------------- toy game

RunRecord run_toy(const TrainConfig& cfg) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;
  const ToyVariant variant = toy_variant_from_string(cfg.variant);
  const Eigen::VectorXd v = to_vector(cfg.v);
  const int d = static_cast<int>(v.size());
  rec.description = "toy game " + to_string(variant) + " d=" + std::to_string(d);
  Rng rng(cfg.seed);
  const ToyBatch batch = sample_toy_batch(d, cfg.toy_batch, rng);

  ParamStore w, theta;
  w.entries.push_back({"w", to_vector(cfg.w0).transpose()});
  theta.entries.push_back({"theta", to_vector(cfg.theta0).transpose()});
  Optimizer opt_w(cfg.optimizer()), opt_theta(cfg.optimizer());

  rec.trajectory.columns.push_back("step");
  for (int i = 0; i < d; ++i) rec.trajectory.columns.push_back("theta" + std::to_string(i));
  for (int i = 0; i < d; ++i) rec.trajectory.columns.push_back("w" + std::to_string(i));
  auto record_row = [&](long t) {
    std::vector<double> row{static_cast<double>(t)};
    for (int i = 0; i < d; ++i) row.push_back(theta.entries[0].value(0, i));
    for (int i = 0; i < d; ++i) row.push_back(w.entries[0].value(0, i));
    rec.trajectory.add_row(row);
  };
  auto evaluate = [&](long t) {
    const Eigen::VectorXd th = theta.entries[0].value.row(0).transpose();
    const Eigen::VectorXd wv = w.entries[0].value.row(0).transpose();
    rec.history.add(t, "gap_inf", (th - v).cwiseAbs().maxCoeff());
    rec.history.add(t, "game_value", toy_game_value(variant, wv, th, v));
  };

  guarded(rec, [&] {
    record_row(0);
    evaluate(0);
    for (long t = 1; t <= cfg.iters; ++t) {
      // Simultaneous updates: both gradients are taken at (w_t, theta_t).
      Graph g;
      const NodeId wn = g.leaf(w.entries[0].value);
      const NodeId tn = g.leaf(theta.entries[0].value);
      const LossPair l = toy_empirical_losses(g, variant, wn, tn, v, batch);
      require_finite(g.scalar_value(l.generator_loss), "toy loss", t);
      const std::array<NodeId, 1> wrt_w{wn}, wrt_t{tn};
      const auto gw = gradient(g, l.discriminator_loss, wrt_w).values;
      const auto gt = gradient(g, l.generator_loss, wrt_t).values;
      opt_w.step(w, gw, Direction::Minimize);
      clip_weights(w, cfg.c);
      opt_theta.step(theta, gt, Direction::Minimize);
      rec.iterations_done = t;
      if (t % cfg.trajectory_every == 0 || t == cfg.iters) record_row(t);
      if (t % cfg.eval_every == 0 || t == cfg.iters) evaluate(t);
    }
  });
  rec.params = {{"generator", theta}, {"discriminator", w}};
  return rec;
}

double oscillation_amplitude(const Table& trajectory, const std::vector<double>& v, std::size_t begin,
                             std::size_t end) {
  double amp = 0;
  for (std::size_t r = begin; r < end && r < trajectory.rows(); ++r)
    for (std::size_t i = 0; i < v.size(); ++i) amp = std::max(amp, std::abs(trajectory.at(r, 1 + i) - v[i]));
  return amp;
}

// ---------------------------------------------------------------- 2D GAN

RunRecord train_gan(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;
  const Target2d target = target2d_from_string(cfg.target);
  const GanLossKind kind = cfg.gan_loss();
  const bool mc = cfg.disc == "mc";
  const MlpSpec gen_spec = arch::generator_2d();
  const MlpSpec van_spec = arch::vanilla_discriminator_2d();
  const MeasureConditionalDiscriminator mc_spec = arch::dmc_2d();

  Rng rng(cfg.seed);
  ParamStore gen = init_params(gen_spec, rng);
  ParamStore disc = mc ? init_params(mc_spec, rng) : init_params(van_spec, rng);
  rec.description = "G " + gen_spec.describe() + "; D " + (mc ? mc_spec.describe() : van_spec.describe());
  Optimizer opt_g(cfg.optimizer()), opt_d(cfg.discriminator_optimizer());

  Rng eval_rng = eval_stream(cfg.seed);
  const W1Config w1{cfg.w1_samples, static_cast<int>(cfg.w1_reps)};
  const Sampler real_sampler = [target](Rng& r, Eigen::Index n) { return sample_target2d(target, n, r).samples; };
  const Sampler gen_sampler = [&](Rng& r, Eigen::Index n) {
    Graph g;
    const auto b = bind_params(g, gen);
    return Matrix(g.value(generator_sample(g, gen_spec, b.span(), n, r)));
  };
  auto evaluate = [&](long step) {
    const W1Estimate e = averaged_w1(gen_sampler, real_sampler, w1, eval_rng);
    rec.history.add(step, "w1", e.mean, e.stddev);
  };

  // Builds D(., G_#N) with a fresh measure-channel sample for mc.
  auto make_disc = [&](Graph& g, const BoundParams& gb, const BoundParams& db) -> DiscriminatorFn {
    if (!mc) return [&, db](Graph& gr, NodeId x) { return mlp_apply(gr, van_spec, db.span(), x); };
    const NodeId measure = generator_sample(g, gen_spec, gb.span(), cfg.measure_batch, rng);
    const std::size_t nf = 2 * mc_spec.f.layer_count();
    const NodeId pooled = pooled_features(g, mc_spec.f, db.slice(0, nf), measure);
    return [&, db, pooled](Graph& gr, NodeId x) { return dmc_apply_pooled(gr, mc_spec, db.span(), x, pooled); };
  };

  auto d_step = [&](long it) {
    Graph g;
    const auto gb = bind_params(g, gen);
    const auto db = bind_params(g, disc);
    const NodeId fake = generator_sample(g, gen_spec, gb.span(), cfg.batch, rng);
    const DiscriminatorFn d = make_disc(g, gb, db);
    const NodeId real = g.constant(sample_target2d(target, cfg.batch, rng).samples);
    const LossPair l = gan_losses(g, kind, d, fake, real, rng);
    require_finite(g.scalar_value(l.discriminator_loss), "discriminator loss", it);
    opt_d.step(disc, grads_of(g, l.discriminator_loss, db), Direction::Minimize);
    if (kind.type == GanLossKind::Type::WganClip) clip_weights(disc, kind.clip);
    if (hooks.on_step) hooks.on_step("d", gen, disc);
  };
  auto g_step = [&](long it) {
    Graph g;
    const auto gb = bind_params(g, gen);
    const auto db = bind_params(g, disc);
    const NodeId fake = generator_sample(g, gen_spec, gb.span(), cfg.batch, rng);
    const DiscriminatorFn d = make_disc(g, gb, db);
    const NodeId real = g.constant(sample_target2d(target, cfg.batch, rng).samples);
    const LossPair l = gan_losses(g, kind, d, fake, real, rng, {false});
    require_finite(g.scalar_value(l.generator_loss), "generator loss", it);
    opt_g.step(gen, grads_of(g, l.generator_loss, gb), Direction::Minimize);
    if (hooks.on_step) hooks.on_step("g", gen, disc);
  };

  guarded(rec, [&] {
    const W1Estimate base = averaged_w1(real_sampler, real_sampler, w1, eval_rng);
    rec.history.add(0, "w1_baseline", base.mean, base.stddev);
    for (long it = 0; it < cfg.iters; ++it) {
      if (it % cfg.eval_every == 0) evaluate(it);
      for (long k = 0; k < cfg.ratio; ++k) d_step(it);
      g_step(it);
      rec.iterations_done = it + 1;
    }
    evaluate(cfg.iters);
  });
  rec.params = {{"generator", gen}, {"discriminator", disc}};
  return rec;
}

// ---------------------------------------------------------------- SDE inference

namespace {

double softplus_inverse(double s) { return s > 30 ? s : std::log(std::expm1(s)); }

SdeGenerator sde_spec(const TrainConfig& cfg) { return SdeGenerator{arch::sde_init_net(), cfg.dt}; }

}  // namespace

std::map<double, Matrix> simulate_observations(const TrainConfig& cfg) {
  cfg.validate();
  const SdeGenerator spec = sde_spec(cfg);
  Rng rng(cfg.obs_seed);
  ParamStore p = init_params(spec, rng);
  const char* names[4] = {"a0", "a1", "a2", "a3"};
  for (int i = 0; i < 4; ++i) p.at(names[i])(0, 0) = cfg.true_coeffs[static_cast<std::size_t>(i)];
  p.at("raw_sigma")(0, 0) = softplus_inverse(cfg.true_coeffs[4]);
  SdeOptions opts;
  opts.initial = Matrix(standard_normal(rng, cfg.observations, 1) * std::sqrt(cfg.init_var));
  Graph g;
  const auto b = bind_params(g, p);
  const auto nodes = sde_simulate(g, spec, b.span(), cfg.observations, cfg.times, rng, opts);
  std::map<double, Matrix> out;
  for (const auto& [t, n] : nodes) out[t] = g.value(n);
  return out;
}

RunRecord train_sde_inference(const TrainConfig& cfg, const std::map<double, Matrix>& observations,
                              const TrainHooks& hooks) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;
  if (observations.size() != cfg.times.size())
    throw std::invalid_argument("train_sde_inference: observation times do not match config times");
  for (double t : cfg.times)
    if (!observations.count(t)) throw std::invalid_argument("train_sde_inference: missing observations at t=" + format_value(t));

  const GanLossKind kind = cfg.gan_loss();
  const SdeGenerator gen_spec = sde_spec(cfg);
  const MlpSpec van_spec = arch::vanilla_discriminator_sde();
  const MeasureConditionalDiscriminator mc_spec = arch::dmc_sde();
  const PairSurrogateDiscriminator sr_spec = arch::dsr_sde();
  const std::size_t n_times = cfg.times.size();

  Rng rng(cfg.seed);
  ParamStore gen = init_params(gen_spec, rng);
  if (cfg.init_sigma > 0) gen.at("raw_sigma")(0, 0) = softplus_inverse(cfg.init_sigma);
  for (int i = 0; i < 4; ++i) gen.at("a" + std::to_string(i))(0, 0) = cfg.init_coeffs[static_cast<std::size_t>(i)];
  // All discriminators live in one store ("t<k>." prefixes for the per-time
  // setups); Adam is elementwise, so one optimizer equals one per network.
  ParamStore disc;
  std::size_t per_disc = 0;
  if (cfg.setup == "dsr_single") {
    disc = init_params(sr_spec, rng);
    per_disc = disc.size();
    rec.description = "SDE " + gen_spec.describe() + "; shared D_sr " + sr_spec.describe();
  } else {
    for (std::size_t k = 0; k < n_times; ++k) {
      const ParamStore one = cfg.setup == "dmc_multi_d" ? init_params(mc_spec, rng) : init_params(van_spec, rng);
      per_disc = one.size();
      disc.append(one, "t" + std::to_string(k) + ".");
    }
    rec.description = "SDE " + gen_spec.describe() + "; " + std::to_string(n_times) + "x " +
                      (cfg.setup == "dmc_multi_d" ? mc_spec.describe() : van_spec.describe());
  }
  rec.counters["discriminator_params"] = static_cast<std::int64_t>(disc.count());
  Rng eval_rng = eval_stream(cfg.seed);
  // The initial-distribution net and the five SDE variables have separate
  // optimizers so that their learning rates can differ.
  const std::size_t n_net = gen.index_of("a0");
  Optimizer opt_g(cfg.optimizer()), opt_d(cfg.discriminator_optimizer());
  const double coeff_lr = cfg.lr_coeff > 0 ? cfg.lr_coeff : cfg.lr;
  Optimizer opt_c(cfg.optimizer(coeff_lr));

  auto target_batch = [&](double t) {
    const Matrix& pool = observations.at(t);
    std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
    Matrix out(cfg.batch, 1);
    for (Eigen::Index i = 0; i < cfg.batch; ++i) out(i, 0) = pool(pick(rng), 0);
    return out;
  };

  auto build = [&](Graph& g, const BoundParams& gb, const BoundParams& db, bool penalty) {
    const auto fake = sde_simulate(g, gen_spec, gb.span(), cfg.batch, cfg.times, rng);
    for (const auto& [t, node] : fake)
      if (!g.value(node).allFinite()) throw TrainingAborted("non-finite particle state at t=" + format_value(t));
    std::map<double, NodeId> measure;
    if (cfg.setup != "vanilla_multi_d") measure = sde_simulate(g, gen_spec, gb.span(), cfg.measure_batch, cfg.times, rng);
    std::map<double, NodeId> targets;
    std::map<double, DiscriminatorFn> ds;
    for (std::size_t k = 0; k < n_times; ++k) {
      const double t = cfg.times[k];
      targets[t] = g.constant(target_batch(t));
      if (cfg.setup == "vanilla_multi_d") {
        const auto slice = db.slice(k * per_disc, per_disc);
        ds[t] = [&, slice](Graph& gr, NodeId x) { return mlp_apply(gr, van_spec, slice, x); };
      } else if (cfg.setup == "dmc_multi_d") {
        const auto slice = db.slice(k * per_disc, per_disc);
        const NodeId pooled = pooled_features(g, mc_spec.f, slice.subspan(0, 2 * mc_spec.f.layer_count()), measure[t]);
        ds[t] = [&, slice, pooled](Graph& gr, NodeId x) { return dmc_apply_pooled(gr, mc_spec, slice, x, pooled); };
      } else {
        const auto r = subnet_ranges(sr_spec);
        const NodeId pp = pooled_features(g, sr_spec.f1, db.slice(r[0].offset, r[0].count), measure[t]);
        const NodeId pq = pooled_features(g, sr_spec.f2, db.slice(r[1].offset, r[1].count), targets[t]);
        ds[t] = [&, db, pp, pq](Graph& gr, NodeId x) { return dsr_apply_pooled(gr, sr_spec, db.span(), x, pp, pq); };
      }
    }
    return multi_target_losses(g, kind, ds, fake, targets, rng, {penalty});
  };

  auto evaluate = [&](long step) {
    const auto c = sde_coefficients(gen);
    const char* names[5] = {"a0", "a1", "a2", "a3", "sigma"};
    double worst = 0;
    for (int i = 0; i < 5; ++i) {
      const double err = std::abs(c[static_cast<std::size_t>(i)] - cfg.true_coeffs[static_cast<std::size_t>(i)]);
      rec.history.add(step, names[i], c[static_cast<std::size_t>(i)]);
      rec.history.add(step, std::string("err_") + names[i], err);
      worst = std::max(worst, err);
    }
    rec.history.add(step, "max_err", worst);
    // Marginal spreads of a fresh simulation against the observations.
    Graph g;
    const auto gb = bind_params(g, gen);
    const Matrix x0 = g.value(mlp_apply(g, gen_spec.init_net, gb.span().subspan(0, n_net),
                                        g.constant(standard_normal(eval_rng, 1000, 1))));
    rec.history.add(step, "init_mean", x0.mean());
    rec.history.add(step, "init_sd", std::sqrt((x0.array() - x0.mean()).square().mean()));
    const auto sim = sde_simulate(g, gen_spec, gb.span(), 1000, cfg.times, eval_rng);
    for (const auto& [t, node] : sim) {
      auto sd = [](const Matrix& m) { return std::sqrt((m.array() - m.mean()).square().mean()); };
      rec.history.add(step, "sd_gen_t" + format_value(t), sd(g.value(node)));
      rec.history.add(step, "sd_obs_t" + format_value(t), sd(observations.at(t)));
    }
  };

  guarded(rec, [&] {
    for (long it = 0; it < cfg.iters; ++it) {
      if (it % cfg.eval_every == 0) evaluate(it);
      for (long k = 0; k < cfg.ratio; ++k) {
        Graph g;
        const auto gb = bind_params(g, gen);
        const auto db = bind_params(g, disc);
        const MultiTargetLosses l = build(g, gb, db, true);
        require_finite(g.scalar_value(l.shared_discriminator_loss), "discriminator loss", it);
        opt_d.step(disc, grads_of(g, l.shared_discriminator_loss, db), Direction::Minimize);
        if (kind.type == GanLossKind::Type::WganClip) clip_weights(disc, kind.clip);
        if (hooks.on_step) hooks.on_step("d", gen, disc);
      }
      rec.iterations_done = it + 1;
      // The critics train alone until warmup so that the first generator
      // steps follow an informed gradient.
      if (it < cfg.warmup) continue;
      Graph g;
      const auto gb = bind_params(g, gen);
      const auto db = bind_params(g, disc);
      const MultiTargetLosses l = build(g, gb, db, false);
      require_finite(g.scalar_value(l.generator_loss), "generator loss", it);
      const auto grads = grads_of(g, l.generator_loss, gb);
      step_range(opt_g, gen, grads, 0, n_net);
      opt_c.set_lr(coeff_lr * decay_factor(cfg, it, cfg.warmup));
      step_range(opt_c, gen, grads, n_net, gen.size());
      if (hooks.on_step) hooks.on_step("g", gen, disc);
    }
    evaluate(cfg.iters);
  });
  rec.params = {{"generator", gen}, {"discriminator", disc}};
  return rec;
}

// ---------------------------------------------------------------- KL surrogate

MeasurePairFamily family_from_config(const TrainConfig& cfg) {
  return MeasurePairFamily::mixed(regime_from_string(cfg.p_regime), regime_from_string(cfg.q_regime),
                                  static_cast<int>(cfg.dim));
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length series");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

KlEvaluation evaluate_kl_surrogate(const PairSurrogateDiscriminator& spec, const ParamStore& params,
                                   const MeasurePairFamily& family, long pairs, long samples, Rng& rng) {
  KlEvaluation ev;
  for (long i = 0; i < pairs; ++i) {
    const auto [p, q] = sample_measure_pair(family, rng);
    Graph g;
    const auto b = bind_params(g, params);
    const NodeId xp = g.constant(sample_gaussian(p, samples, rng).samples);
    const NodeId xq = g.constant(sample_gaussian(q, samples, rng).samples);
    ev.surrogate.push_back(g.scalar_value(kl_surrogate_loss(g, spec, b.span(), xp, xq)));
    ev.analytic.push_back(analytic_kl(p, q));
  }
  const double n = static_cast<double>(pairs);
  std::vector<double> err(ev.surrogate.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = ev.surrogate[i] - ev.analytic[i];
  ev.mean_error = std::accumulate(err.begin(), err.end(), 0.0) / n;
  double ss = 0;
  for (double e : err) ss += (e - ev.mean_error) * (e - ev.mean_error);
  ev.standard_error = pairs > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  ev.pearson = pairs > 1 ? pearson(ev.surrogate, ev.analytic) : 0.0;
  return ev;
}

RunRecord train_kl_surrogate(const TrainConfig& cfg, const MeasurePairFamily& family) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;
  const PairSurrogateDiscriminator spec = arch::dsr_kl(family.dim);
  rec.description = "D_sr " + spec.describe();
  Rng rng(cfg.seed);
  ParamStore params = init_params(spec, rng, InitOptions{cfg.zero_final != 0});
  Optimizer opt(cfg.optimizer());
  Rng eval_rng = eval_stream(cfg.seed);

  const std::pair<const char*, MeasurePairFamily> regimes[3] = {
      {"a", MeasurePairFamily::mixed(Regime::Train, Regime::Train, family.dim)},
      {"b", MeasurePairFamily::mixed(Regime::Train, Regime::Test, family.dim)},
      {"c", MeasurePairFamily::mixed(Regime::Test, Regime::Test, family.dim)}};
  auto evaluate = [&](long step) {
    const KlEvaluation own = evaluate_kl_surrogate(spec, params, family, cfg.test_pairs, cfg.test_samples, eval_rng);
    rec.history.add(step, "mean_error", own.mean_error, own.standard_error);
    if (own.surrogate.size() > 1) rec.history.add(step, "pearson", own.pearson);
    for (const auto& [name, fam] : regimes) {
      const KlEvaluation e = evaluate_kl_surrogate(spec, params, fam, cfg.test_pairs, cfg.test_samples, eval_rng);
      rec.history.add(step, std::string("pearson_") + name, e.pearson);
      rec.history.add(step, std::string("mean_error_") + name, e.mean_error, e.standard_error);
    }
  };

  std::int64_t clamps = 0;
  long saturated_run = 0;
  guarded(rec, [&] {
    for (long it = 0; it < cfg.iters; ++it) {
      if (it % cfg.eval_every == 0) evaluate(it);
      Graph g;
      const auto b = bind_params(g, params);
      NodeId total;
      for (long k = 0; k < cfg.pair_batch; ++k) {
        const auto [p, q] = sample_measure_pair(family, rng);
        const NodeId xp = g.constant(sample_gaussian(p, cfg.samples, rng).samples);
        const NodeId xq = g.constant(sample_gaussian(q, cfg.samples, rng).samples);
        const NodeId l = kl_surrogate_loss(g, spec, b.span(), xp, xq);
        total = total.valid() ? g.add(total, l) : l;
      }
      const NodeId loss = g.scale(total, -1.0 / static_cast<double>(cfg.pair_batch));
      require_finite(g.scalar_value(loss), "surrogate loss", it);
      clamps += g.exp_clamp_count();
      const double frac = static_cast<double>(g.exp_clamp_count()) / static_cast<double>(g.exp_element_count());
      saturated_run = frac > 0.1 ? saturated_run + 1 : 0;
      if (saturated_run >= 100)
        throw TrainingAborted("exp clamp saturated (>10% of terms) for 100 consecutive steps at iteration " +
                              std::to_string(it));
      opt.step(params, grads_of(g, loss, b), Direction::Minimize);
      opt.set_lr(cfg.lr * decay_factor(cfg, it + 1, 0));
      rec.iterations_done = it + 1;
    }
    evaluate(cfg.iters);
  });
  rec.counters["exp_clamps"] = clamps;
  rec.params = {{"surrogate", params}};
  return rec;
}

// ---------------------------------------------------------------- transfer

GaussianSpec transfer_target(const TrainConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(cfg.target_mean.size());
  Matrix cov = Eigen::Map<const Matrix>(cfg.target_cov.data(), d, d);
  return GaussianSpec(to_vector(cfg.target_mean), cov);
}

double transfer_recovery_error(const ParamStore& generator, const GaussianSpec& target) {
  const Matrix& a = generator.at("A");
  const Matrix& b = generator.at("b");
  if (a.rows() != 2 || target.dim() != 2) throw std::invalid_argument("transfer_recovery_error: 2D only");
  double err = 0;
  err = std::max(err, std::abs(std::abs(a(0, 0)) - std::sqrt(target.cov()(0, 0))));
  err = std::max(err, std::abs(std::abs(a(1, 1)) - std::sqrt(target.cov()(1, 1))));
  err = std::max(err, std::abs(a(0, 1)));
  err = std::max(err, std::abs(b(0, 0) - target.mean()(0)));
  err = std::max(err, std::abs(b(0, 1) - target.mean()(1)));
  return err;
}

RunRecord run_transfer(const TrainConfig& cfg, const PairSurrogateDiscriminator& spec, const ParamStore& pretrained,
                       const GaussianSpec& target, const TrainHooks& hooks) {
  cfg.validate();
  if (spec.data_dim() != target.dim())
    throw std::invalid_argument("run_transfer: surrogate dimension does not match the target");
  RunRecord rec;
  rec.config = cfg;
  const AffineGenerator gen_spec{target.dim(),
                                 cfg.gen_setup == "diag4" ? AffinePattern::Diagonal : AffinePattern::UpperTriangular};
  rec.description = gen_spec.describe() + "; D_sr " + spec.describe() + "; mode " + cfg.mode;
  Rng rng(cfg.seed);
  ParamStore gen = init_params(gen_spec);
  ParamStore disc = cfg.mode == "scratch" ? init_params(spec, rng, InitOptions{true}) : pretrained;
  if (disc.count() != spec.param_count()) throw std::invalid_argument("run_transfer: pretrained store does not match spec");
  Optimizer opt_g(cfg.optimizer()), opt_d(cfg.discriminator_optimizer());
  const bool train_d = cfg.mode != "frozen";

  auto losses = [&](Graph& g, const BoundParams& gb, const BoundParams& db) {
    const NodeId xp = generator_sample(g, gen_spec, gb.span(), cfg.samples, rng);
    const NodeId xq = g.constant(sample_gaussian(target, cfg.samples, rng).samples);
    return kl_surrogate_loss(g, spec, db.span(), xp, xq);
  };
  auto evaluate = [&](long step) {
    const Matrix& a = gen.at("A");
    const Matrix& b = gen.at("b");
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        rec.history.add(step, "A" + std::to_string(i) + std::to_string(j), a(i, j));
    for (Eigen::Index j = 0; j < b.cols(); ++j) rec.history.add(step, "b" + std::to_string(j), b(0, j));
    if (target.dim() == 2) rec.history.add(step, "recovery_error", transfer_recovery_error(gen, target));
  };

  guarded(rec, [&] {
    for (long it = 0; it < cfg.iters; ++it) {
      if (it % cfg.eval_every == 0) evaluate(it);
      if (train_d) {
        for (long k = 0; k < cfg.ratio; ++k) {
          Graph g;
          const auto gb = bind_params(g, gen);
          const auto db = bind_params(g, disc);
          const NodeId loss = g.neg(losses(g, gb, db));
          require_finite(g.scalar_value(loss), "surrogate loss", it);
          opt_d.step(disc, grads_of(g, loss, db), Direction::Minimize);
          if (hooks.on_step) hooks.on_step("d", gen, disc);
        }
      }
      Graph g;
      const auto gb = bind_params(g, gen);
      const auto db = bind_params(g, disc);
      const NodeId loss = losses(g, gb, db);
      require_finite(g.scalar_value(loss), "generator loss", it);
      opt_g.step(gen, grads_of(g, loss, gb), Direction::Minimize);
      if (hooks.on_step) hooks.on_step("g", gen, disc);
      rec.iterations_done = it + 1;
    }
    evaluate(cfg.iters);
  });
  rec.params = {{"generator", gen}, {"surrogate", disc}};
  return rec;
}

// ---------------------------------------------------------------- OT surrogate

double evaluate_ot_map(const PairSurrogateDiscriminator& spec, const ParamStore& params,
                       const MeasurePairFamily& family, long pairs, long points, long samples, Rng& rng) {
  double total = 0;
  for (long i = 0; i < pairs; ++i) {
    const auto [p, q] = sample_measure_pair(family, rng);
    const Matrix xs = sample_gaussian(p, samples, rng).samples;
    const Matrix ys = sample_gaussian(q, samples, rng).samples;
    const Matrix x = sample_gaussian(p, points, rng).samples;
    Graph g;
    const auto b = bind_params(g, params);
    const Matrix mapped = g.value(dsr_apply(g, spec, b.span(), g.constant(x), g.constant(xs), g.constant(ys)));
    total += (mapped - gaussian_ot_map(p, q, x)).rowwise().norm().mean();
  }
  return total / static_cast<double>(pairs);
}

RunRecord train_ot_surrogate(const TrainConfig& cfg, const MeasurePairFamily& family) {
  cfg.validate();
  RunRecord rec;
  rec.config = cfg;
  const PairSurrogateDiscriminator map_spec = arch::dsr_ot_map(family.dim);
  const PairSurrogateDiscriminator dual_spec = arch::dsr_ot_dual(family.dim);
  rec.description = "map " + map_spec.describe() + "; dual " + dual_spec.describe();
  Rng rng(cfg.seed);
  ParamStore map = init_params(map_spec, rng);
  ParamStore dual = init_params(dual_spec, rng, InitOptions{cfg.zero_final != 0});
  Optimizer opt_map(cfg.optimizer()), opt_dual(cfg.discriminator_optimizer());
  const double opt_dual_lr = opt_dual.config().lr;
  Rng eval_rng = eval_stream(cfg.seed);

  // Running means of the training losses since the previous evaluation.
  double dual_sum = 0, map_sum = 0;
  long dual_n = 0, map_n = 0;
  auto evaluate = [&](long step) {
    if (dual_n > 0) rec.history.add(step, "dual_loss", dual_sum / static_cast<double>(dual_n));
    if (map_n > 0) rec.history.add(step, "map_loss", map_sum / static_cast<double>(map_n));
    dual_sum = map_sum = 0;
    dual_n = map_n = 0;
    rec.history.add(step, "map_error",
                    evaluate_ot_map(map_spec, map, family, cfg.test_pairs, cfg.test_points, cfg.test_samples, eval_rng));
  };

  guarded(rec, [&] {
    for (long it = 0; it < cfg.iters; ++it) {
      if (it % cfg.eval_every == 0) evaluate(it);
      std::vector<std::pair<Matrix, Matrix>> batch;
      for (long k = 0; k < cfg.pair_batch; ++k) {
        const auto [p, q] = sample_measure_pair(family, rng);
        batch.emplace_back(sample_gaussian(p, cfg.samples, rng).samples, sample_gaussian(q, cfg.samples, rng).samples);
      }
      auto build = [&](Graph& g, const BoundParams& mb, const BoundParams& db, bool with_map) {
        std::vector<std::pair<NodeId, NodeId>> pairs;
        for (const auto& [x, y] : batch) pairs.emplace_back(g.constant(x), g.constant(y));
        return ot_surrogate_losses(g, map_spec, mb.span(), dual_spec, db.span(), pairs, cfg.eps, with_map);
      };
      {
        Graph g;
        const auto mb = bind_params(g, map);
        const auto db = bind_params(g, dual);
        const OtLosses l = build(g, mb, db, false);
        require_finite(g.scalar_value(l.discriminator_loss), "dual loss", it);
        dual_sum += g.scalar_value(l.discriminator_loss);
        ++dual_n;
        opt_dual.step(dual, grads_of(g, l.discriminator_loss, db), Direction::Minimize);
        opt_dual.set_lr(opt_dual_lr * decay_factor(cfg, it + 1, 0));
      }
      if (it >= cfg.warmup) {
        Graph g;
        const auto mb = bind_params(g, map);
        const auto db = bind_params(g, dual);
        const OtLosses l = build(g, mb, db, true);
        require_finite(g.scalar_value(l.generator_loss), "map loss", it);
        map_sum += g.scalar_value(l.generator_loss);
        ++map_n;
        opt_map.step(map, grads_of(g, l.generator_loss, mb), Direction::Minimize);
        opt_map.set_lr(cfg.lr * decay_factor(cfg, it + 1, cfg.warmup));
      }
      rec.iterations_done = it + 1;
    }
    evaluate(cfg.iters);
  });
  rec.params = {{"map", map}, {"dual", dual}};
  return rec;
}

// ---------------------------------------------------------------- persistence

void write_run(const std::string& dir, const RunRecord& record) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  record.history.write_csv((root / "metrics.csv").string());
  if (record.trajectory.rows() > 0) record.trajectory.write_csv((root / "trajectory.csv").string());

  std::ofstream m(root / "manifest.txt");
  if (!m) throw std::runtime_error("cannot write manifest in " + dir);
  m << "code_version=" << kCodeVersion << "\n";
  m << "description=" << record.description << "\n";
  for (const auto& [k, v] : record.config.to_kv()) m << k << "=" << v << "\n";
  m << "iterations_done=" << record.iterations_done << "\n";
  m << "aborted=" << (record.aborted ? 1 : 0) << "\n";
  if (record.aborted) m << "abort_reason=" << record.abort_reason << "\n";
  for (const auto& [k, v] : record.counters) m << "counter." << k << "=" << v << "\n";
  m << "wall_seconds=" << std::setprecision(6) << record.wall_seconds << "\n";

  Checkpoint ckpt;
  ckpt.description = record.description;
  ckpt.seed = record.config.seed;
  ckpt.iteration = record.iterations_done;
  ckpt.stores = record.params;
  write_checkpoint((root / "checkpoint.bin").string(), ckpt);
}

RunRecord run_experiment(const TrainConfig& cfg) {
  cfg.validate();
  const std::string& e = cfg.experiment;
  if (e == "toy") return run_toy(cfg);
  if (e == "gan2d") return train_gan(cfg);
  if (e == "sde-infer") return train_sde_inference(cfg, simulate_observations(cfg));
  if (e == "kl-surrogate") return train_kl_surrogate(cfg, family_from_config(cfg));
  if (e == "ot-surrogate") return train_ot_surrogate(cfg, family_from_config(cfg));
  if (e == "transfer") {
    const GaussianSpec target = transfer_target(cfg);
    const PairSurrogateDiscriminator spec = arch::dsr_kl(target.dim());
    if (cfg.mode == "scratch") return run_transfer(cfg, spec, init_params(spec, *std::make_unique<Rng>(cfg.seed)), target);
    if (cfg.pretrained.empty()) throw std::invalid_argument("config: transfer mode " + cfg.mode + " needs pretrained=<checkpoint>");
    const Checkpoint ckpt = read_checkpoint(cfg.pretrained);
    return run_transfer(cfg, spec, ckpt.store("surrogate"), target);
  }
  throw std::invalid_argument("unknown experiment: " + e);
}

}  // namespace mcgan
