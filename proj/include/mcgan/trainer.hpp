#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcgan/distributions.hpp"
#include "mcgan/losses.hpp"
#include "mcgan/metrics.hpp"
#include "mcgan/nn.hpp"
#include "mcgan/optim.hpp"

namespace mcgan {

inline constexpr const char* kCodeVersion = "mcgan 0.1.0";

/// Every experiment setting. Keys of to_kv()/from_kv() mirror CLI flag names.
struct TrainConfig {
  std::string experiment = "gan2d";
  std::uint64_t seed = 0;
  long iters = 20000;
  long eval_every = 500;

  // Optimizer.
  std::string opt = "adam";
  double lr = 1e-4;
  double lr_d = 0;      // discriminator / dual network; 0 means lr
  double lr_coeff = 0;  // SDE drift and diffusion variables; 0 means lr
  /// Final learning-rate multiplier of a linear schedule (1 = constant). Used
  /// by the SDE coefficients, the KL surrogate and both OT networks.
  double decay = 1;
  double beta1 = 0.5;
  double beta2 = 0.9;
  long ratio = 1;

  // GAN training.
  std::string loss = "wgan-gp";
  double clip = 0.01;
  double lambda = 10.0;
  std::string disc = "mc";  // vanilla | mc | sr
  std::string target = "ring8";
  long batch = 256;
  long measure_batch = 256;
  long w1_samples = 256;
  long w1_reps = 20;

  // Toy game.
  std::string variant = "vanilla";
  std::vector<double> v{3.0, 4.0};
  double c = 10.0;
  long toy_batch = 10000;
  std::vector<double> theta0{-12.0, -12.0};
  std::vector<double> w0{0.0, 0.0};
  long trajectory_every = 1;

  // SDE inference.
  std::string setup = "dmc_multi_d";  // vanilla_multi_d | dmc_multi_d | dsr_single
  long observations = 10000;
  double dt = 0.01;
  std::vector<double> times{0.2, 0.5, 1.0};
  double init_var = 0.2;
  std::vector<double> true_coeffs{0.0, 1.0, 0.0, -1.0, 1.0};
  std::uint64_t obs_seed = 20200101;
  double init_sigma = 1.5;  // starting diffusion; 0 keeps softplus(0)
  std::vector<double> init_coeffs{0.0, 0.0, 0.0, 0.0};  // starting a0..a3

  // KL surrogate.
  long dim = 2;
  std::string p_regime = "train";
  std::string q_regime = "train";
  long pair_batch = 100;
  long samples = 1000;
  long test_pairs = 200;
  long test_samples = 1000;
  long zero_final = 1;

  // Transfer.
  std::string gen_setup = "diag4";  // diag4 | tri5
  std::string mode = "finetune";    // finetune | frozen | scratch
  std::string pretrained;           // checkpoint path
  std::vector<double> target_mean{0.1, -0.1};
  std::vector<double> target_cov{0.3, 0.0, 0.0, 0.6};

  // OT surrogate.
  double eps = kOtEpsilon;
  /// Iterations in which only the critic (SDE) or dual (OT) network trains.
  long warmup = 2000;
  long test_points = 200;

  std::vector<std::pair<std::string, std::string>> to_kv() const;
  /// Applies key=value overrides; unknown keys and malformed values throw.
  void apply(const std::string& key, const std::string& value);
  void validate() const;
  /// Optimizer settings with learning rate `rate` (default: lr).
  OptimizerConfig optimizer(double rate = -1) const;
  OptimizerConfig discriminator_optimizer() const { return optimizer(lr_d > 0 ? lr_d : lr); }
  GanLossKind gan_loss() const;
};

/// Desk-scale defaults for one experiment: toy, gan2d, sde-infer,
/// kl-surrogate, transfer, ot-surrogate.
TrainConfig default_config(const std::string& experiment);

/// Column table for per-step trajectories.
struct Table {
  std::vector<std::string> columns;
  std::vector<double> data;

  std::size_t rows() const { return columns.empty() ? 0 : data.size() / columns.size(); }
  double at(std::size_t row, std::size_t col) const { return data[row * columns.size() + col]; }
  std::vector<double> column(const std::string& name) const;
  void add_row(const std::vector<double>& row);
  void write_csv(const std::string& path) const;
};

struct RunRecord {
  TrainConfig config;
  MetricHistory history;
  Table trajectory;
  std::map<std::string, std::int64_t> counters;
  std::vector<std::pair<std::string, ParamStore>> params;
  std::string description;
  long iterations_done = 0;
  double wall_seconds = 0;
  bool aborted = false;
  std::string abort_reason;

  const ParamStore& store(const std::string& name) const;
};

/// Raised inside a loop on a non-finite loss or state; the loops catch it
/// and return a record with `aborted` set.
struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Observes every completed update. `phase` is "d" or "g".
struct TrainHooks {
  std::function<void(const char* phase, const ParamStore& gen, const ParamStore& disc)> on_step;
};

// ---------------------------------------------------------------- toy game

RunRecord run_toy(const TrainConfig& cfg);

/// max_t ||theta_t - v||_inf over rows [begin, end) of a toy trajectory.
double oscillation_amplitude(const Table& trajectory, const std::vector<double>& v, std::size_t begin,
                             std::size_t end);

// ---------------------------------------------------------------- 2D GAN

RunRecord train_gan(const TrainConfig& cfg, const TrainHooks& hooks = {});

// ---------------------------------------------------------------- SDE inference

/// Particles at each time from the ground-truth SDE with x0 ~ N(0, init_var).
std::map<double, Matrix> simulate_observations(const TrainConfig& cfg);

RunRecord train_sde_inference(const TrainConfig& cfg, const std::map<double, Matrix>& observations,
                              const TrainHooks& hooks = {});

// ---------------------------------------------------------------- KL surrogate

MeasurePairFamily family_from_config(const TrainConfig& cfg);

RunRecord train_kl_surrogate(const TrainConfig& cfg, const MeasurePairFamily& family);

struct KlEvaluation {
  std::vector<double> surrogate;
  std::vector<double> analytic;
  double pearson = 0;
  double mean_error = 0;      // mean(surrogate - analytic)
  double standard_error = 0;  // of the mean error
};

KlEvaluation evaluate_kl_surrogate(const PairSurrogateDiscriminator& spec, const ParamStore& params,
                                   const MeasurePairFamily& family, long pairs, long samples, Rng& rng);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------- transfer

GaussianSpec transfer_target(const TrainConfig& cfg);

RunRecord run_transfer(const TrainConfig& cfg, const PairSurrogateDiscriminator& spec,
                       const ParamStore& pretrained, const GaussianSpec& target, const TrainHooks& hooks = {});

/// Max absolute deviation of (|A00|, |A11|, A01, b) from the push-forward
/// solution A = diag(sqrt(Sigma)), b = m (reflections allowed).
double transfer_recovery_error(const ParamStore& generator, const GaussianSpec& target);

// ---------------------------------------------------------------- OT surrogate

RunRecord train_ot_surrogate(const TrainConfig& cfg, const MeasurePairFamily& family);

/// Mean Euclidean distance between the learned map and gaussian_ot_map on
/// `points` fresh points per held-out pair, conditioning on `samples` draws.
double evaluate_ot_map(const PairSurrogateDiscriminator& spec, const ParamStore& params,
                       const MeasurePairFamily& family, long pairs, long points, long samples, Rng& rng);

// ---------------------------------------------------------------- persistence

/// metrics.csv, manifest.txt, checkpoint.bin and (if present) trajectory.csv.
void write_run(const std::string& dir, const RunRecord& record);

/// Dispatches on cfg.experiment.
RunRecord run_experiment(const TrainConfig& cfg);

}  // namespace mcgan
