// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5] [--workdir DIR] [--cli PATH]

#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mcgan/checkpoint.hpp"
#include "mcgan/trainer.hpp"
#include "support/oracles.hpp"

using namespace mcgan;
namespace fs = std::filesystem;

namespace {

struct Context {
  fs::path workdir;
  std::string cli;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Matrix uniform(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double last_value(const RunRecord& r, const std::string& name) {
  const auto s = r.history.series(name);
  if (s.empty()) return NAN;
  return s.back().second;
}

// ---------------------------------------------------------------- 1, 2

Outcome toy_oscillation(const Context& ctx) {
  TrainConfig c = default_config("toy");
  c.variant = "vanilla";
  const RunRecord vanilla = run_toy(c);
  write_run((ctx.workdir / "c1_vanilla").string(), vanilla);
  const Table& t = vanilla.trajectory;
  const std::size_t rows = t.rows();
  const double peak = oscillation_amplitude(t, c.v, 0, rows);
  const double tail = oscillation_amplitude(t, c.v, rows - rows / 5, rows);

  c.variant = "mc";
  const RunRecord mc = run_toy(c);
  write_run((ctx.workdir / "c1_mc").string(), mc);
  const Table& m = mc.trajectory;
  const std::size_t last = m.rows() - 1;
  double gap = 0;
  for (std::size_t i = 0; i < c.v.size(); ++i) gap = std::max(gap, std::abs(m.at(last, 1 + i) - c.v[i]));
  const double w0 = m.at(last, 1 + c.v.size()), w1 = m.at(last, 2 + c.v.size());

  const bool pass = tail >= 0.5 * peak && gap < 0.05 && w0 > 0.5 * c.c && w1 > 0.5 * c.c;
  return {pass, "vanilla GD tail/peak amplitude " + fmt(tail) + "/" + fmt(peak) + " = " + fmt(tail / peak) +
                    " (need >= 0.5); measure-conditional |theta-v|_inf " + fmt(gap) + " (need < 0.05), w = (" +
                    fmt(w0) + ", " + fmt(w1) + ") (need > " + fmt(0.5 * c.c) + ")"};
}

Outcome omd_ordering(const Context& ctx) {
  std::vector<double> amps;
  std::string detail = "terminal amplitude (last 10% of model time) at lr 0.1/0.01/0.001 with lr*iters = 200:";
  for (double lr : {0.1, 0.01, 0.001}) {
    TrainConfig c = default_config("toy");
    c.opt = "omd";
    c.lr = lr;
    c.iters = std::lround(200.0 / lr);
    c.trajectory_every = c.iters / 2000;
    c.eval_every = c.iters;
    const RunRecord r = run_toy(c);
    write_run((ctx.workdir / ("c2_omd_lr" + fmt(lr))).string(), r);
    const std::size_t rows = r.trajectory.rows();
    amps.push_back(oscillation_amplitude(r.trajectory, c.v, rows - rows / 10, rows));
    detail += " " + fmt(amps.back());
  }
  return {amps[0] < amps[1] && amps[1] < amps[2], detail + " (need strictly increasing)"};
}

// ---------------------------------------------------------------- 3, 4

Outcome autodiff_checks(const Context&) {
  Rng rng(2024);
  const std::array acts{Activation::Relu, Activation::LeakyRelu, Activation::Tanh};
  auto random_params = [&](const MlpSpec& spec) {
    ParamStore p = init_params(spec, rng);
    for (auto& e : p.entries)
      if (e.name.ends_with("bias")) e.value = uniform(rng, e.value.rows(), e.value.cols(), -0.5, 0.5);
    return p;
  };

  int first_ok = 0;
  double first_worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpSpec spec{{3, 8, 8, 8, 2}, acts[static_cast<std::size_t>(trial) % 3]};
    const ParamStore p = random_params(spec);
    const Matrix xv = uniform(rng, 5, 3, -1, 1);
    if (testing::min_abs_preactivation(spec, p, xv) < 1e-3) {
      --trial;
      continue;
    }
    Graph g;
    const auto b = bind_params(g, p);
    const NodeId x = g.leaf(xv);
    const NodeId y = mlp_apply(g, spec, b.span(), x);
    const NodeId out = g.sum(g.mul(y, g.constant(uniform(rng, 5, 2, -1, 1))));
    std::vector<NodeId> wrt = b.ids;
    wrt.push_back(x);
    const auto grads = gradient(g, out, wrt);
    double worst = 0;
    for (std::size_t i = 0; i < wrt.size(); ++i)
      worst = std::max(worst, testing::relative_error(grads[i], testing::fd_gradient(g, out, wrt[i])));
    first_worst = std::max(first_worst, worst);
    first_ok += worst <= 1e-5;
  }

  int second_ok = 0;
  double second_worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const MlpSpec spec{{2, 10, 10, 1}, acts[static_cast<std::size_t>(trial) % 3]};
    const ParamStore p = random_params(spec);
    const Matrix xv = uniform(rng, 6, 2, -1, 1);
    if (testing::min_abs_preactivation(spec, p, xv) < 1e-3) {
      --trial;
      continue;
    }
    Graph g;
    const auto b = bind_params(g, p);
    const NodeId x = g.leaf(xv);
    const NodeId penalty = gradient_penalty(g, mlp_apply(g, spec, b.span(), x), x);
    const auto grads = gradient(g, penalty, b.span());
    double worst = 0;
    for (std::size_t i = 0; i < b.ids.size(); ++i)
      worst = std::max(worst, testing::relative_error(grads[i], testing::fd_gradient(g, penalty, b.ids[i])));
    second_worst = std::max(second_worst, worst);
    second_ok += worst <= 1e-4;
  }
  return {first_ok == 100 && second_ok == 20,
          "first order " + std::to_string(first_ok) + "/100 (worst rel. err " + fmt(first_worst) +
              "), gradient penalty " + std::to_string(second_ok) + "/20 (worst " + fmt(second_worst) + ")"};
}

Outcome w1_oracle(const Context&) {
  Rng rng(77);
  std::uniform_int_distribution<int> small(1, 6), large(1, 1000);
  int brute_ok = 0;
  double brute_worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = small(rng);
    const Matrix a = uniform(rng, n, 2, -2, 2), b = uniform(rng, n, 2, -2, 2);
    const double err = std::abs(exact_w1(a, b) - testing::brute_force_w1(a, b));
    brute_worst = std::max(brute_worst, err);
    brute_ok += err <= 1e-9;
  }
  int sorted_ok = 0;
  double sorted_worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = large(rng);
    const Matrix a = standard_normal(rng, n, 1), b = uniform(rng, n, 1, -3, 1);
    const std::vector<double> av(a.data(), a.data() + n), bv(b.data(), b.data() + n);
    const double err = std::abs(exact_w1(a, b) - testing::sorted_w1(av, bv));
    sorted_worst = std::max(sorted_worst, err);
    sorted_ok += err <= 1e-9;
  }
  return {brute_ok == 200 && sorted_ok == 50,
          "exhaustive matching " + std::to_string(brute_ok) + "/200 (worst " + fmt(brute_worst) + "), sorted 1D " +
              std::to_string(sorted_ok) + "/50 (worst " + fmt(sorted_worst) + ")"};
}

// ---------------------------------------------------------------- 5, 6

Outcome gan_robustness(const Context& ctx) {
  TrainConfig base = default_config("gan2d");
  base.loss = "wgan-gp";
  base.target = "ring8";
  base.ratio = 1;
  base.beta1 = 0.9;
  base.beta2 = 0.999;
  base.iters = 20000;
  base.w1_samples = 256;
  base.w1_reps = 20;

  int mc_reached = 0;
  double mc_final = 0, vanilla_final = 0;
  std::string detail;
  for (const char* disc : {"mc", "vanilla"}) {
    detail += std::string(disc) + ":";
    for (std::uint64_t seed : {0, 1, 2}) {
      TrainConfig c = base;
      c.disc = disc;
      c.seed = seed;
      const RunRecord r = train_gan(c);
      write_run((ctx.workdir / ("c5_" + std::string(disc) + "_seed" + std::to_string(seed))).string(), r);
      const double baseline = last_value(r, "w1_baseline");
      double best = INFINITY;
      for (const auto& [step, v] : r.history.series("w1")) best = std::min(best, v);
      const double final = r.aborted ? INFINITY : last_value(r, "w1");
      if (std::string(disc) == "mc") {
        mc_reached += !r.aborted && best <= 2 * baseline;
        mc_final += final / 3;
      } else {
        vanilla_final += final / 3;
      }
      detail += " [seed " + std::to_string(seed) + " final " + fmt(final) + " best " + fmt(best) + " baseline " +
                fmt(baseline) + (r.aborted ? " aborted" : "") + "]";
    }
    detail += "; ";
  }
  const bool pass = mc_reached >= 2 && vanilla_final >= mc_final;
  return {pass, "mc reached <= 2x baseline on " + std::to_string(mc_reached) + "/3 seeds; mean final W1 mc " +
                    fmt(mc_final) + " vs vanilla " + fmt(vanilla_final) + ". " + detail};
}

Outcome sde_inference(const Context& ctx) {
  TrainConfig base = default_config("sde-infer");
  base.setup = "dmc_multi_d";
  base.loss = "wgan-gp";
  base.ratio = 5;
  base.beta1 = 0.5;
  base.beta2 = 0.9;
  base.observations = 10000;
  const auto observations = simulate_observations(base);
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    TrainConfig c = base;
    c.seed = seed;
    const RunRecord r = train_sde_inference(c, observations);
    write_run((ctx.workdir / ("c6_seed" + std::to_string(seed))).string(), r);
    const auto coeffs = sde_coefficients(r.store("generator"));
    double worst = 0;
    for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(coeffs[i] - c.true_coeffs[i]));
    ok += !r.aborted && worst <= 0.25;
    detail += " [seed " + std::to_string(seed) + ": (" + fmt(coeffs[0], 3) + ", " + fmt(coeffs[1], 3) + ", " +
              fmt(coeffs[2], 3) + ", " + fmt(coeffs[3], 3) + ", " + fmt(coeffs[4], 3) + ") max err " + fmt(worst, 3) +
              (r.aborted ? " aborted: " + r.abort_reason : "") + "]";
  }
  return {ok >= 2, std::to_string(ok) + "/3 seeds within 0.25 of (0, 1, 0, -1, 1);" + detail};
}

// ---------------------------------------------------------------- 7, 8

// The KL surrogate trained with the desk defaults, cached under the workdir
// and keyed by its resolved configuration.
ParamStore pretrained_kl_surrogate(const Context& ctx) {
  TrainConfig c = default_config("kl-surrogate");
  c.dim = 2;
  c.p_regime = c.q_regime = "train";
  std::string key;
  for (const auto& [k, v] : c.to_kv()) key += k + "=" + v + ";";
  const fs::path dir = ctx.workdir / "kl_pretrained";
  const fs::path ckpt = dir / "checkpoint.bin";
  if (fs::exists(ckpt)) {
    const Checkpoint ck = read_checkpoint(ckpt.string());
    if (ck.description == key) return ck.store("surrogate");
  }
  RunRecord r = train_kl_surrogate(c, family_from_config(c));
  if (r.aborted) throw std::runtime_error("KL surrogate training aborted: " + r.abort_reason);
  write_run((ctx.workdir / "c7_train").string(), r);
  fs::create_directories(dir);
  Checkpoint ck;
  ck.description = key;
  ck.seed = c.seed;
  ck.iteration = r.iterations_done;
  ck.stores = r.params;
  write_checkpoint(ckpt.string(), ck);
  return r.store("surrogate");
}

Outcome kl_surrogate(const Context& ctx) {
  const ParamStore params = pretrained_kl_surrogate(ctx);
  const PairSurrogateDiscriminator spec = arch::dsr_kl(2);
  const MeasurePairFamily fam = MeasurePairFamily::regime(Regime::Train, 2);
  Rng rng(424242);
  const KlEvaluation e = evaluate_kl_surrogate(spec, params, fam, 200, 1000, rng);
  const bool corr_ok = e.pearson >= 0.95;
  const bool bound_ok = !(e.mean_error > 3 * e.standard_error);

  // Cost accounting: surrogate cost is affine in n, KDE cost is quadratic.
  bool flops_ok = true;
  auto manual_mlp = [](const MlpSpec& s) {
    double f = 0;
    for (std::size_t l = 0; l + 1 < s.widths.size(); ++l) f += 2.0 * s.widths[l] * s.widths[l + 1];
    return f;
  };
  const double per_point = manual_mlp(spec.f1) + manual_mlp(spec.f2);
  const double per_eval = manual_mlp(spec.g) + manual_mlp(spec.h);
  std::vector<double> sur, kde;
  for (double n : {100.0, 200.0, 300.0, 400.0}) {
    const FlopReport s = surrogate_flops(spec, n, n, 2 * n);
    flops_ok = flops_ok && s.total == n * per_point + 2 * n * per_eval;
    sur.push_back(s.total);
    const FlopReport k = kde_flops(n, n, 2);
    flops_ok = flops_ok && k.total == 2 * n * n * 4;
    kde.push_back(k.total);
  }
  for (std::size_t i = 2; i < sur.size(); ++i) {
    flops_ok = flops_ok && sur[i] - 2 * sur[i - 1] + sur[i - 2] == 0;
    flops_ok = flops_ok && kde[i] - 2 * kde[i - 1] + kde[i - 2] == 2 * 4 * 2 * 100.0 * 100.0;
  }
  Rng krng(5);
  const Matrix p = standard_normal(krng, 150, 2), q = standard_normal(krng, 150, 2);
  flops_ok = flops_ok && kde_kl(p, q).kernel_evaluations == 2ULL * 150 * 150;

  return {corr_ok && bound_ok && flops_ok,
          "Pearson " + fmt(e.pearson) + " on 200 held-out pairs (need >= 0.95); mean l_KL - KL " + fmt(e.mean_error) +
              " with standard error " + fmt(e.standard_error) + " (fails if > 3 SE); FLOP identities " +
              (flops_ok ? "hold" : "violated")};
}

Outcome transfer(const Context& ctx) {
  const ParamStore pretrained = pretrained_kl_surrogate(ctx);
  const PairSurrogateDiscriminator spec = arch::dsr_kl(2);
  TrainConfig c = default_config("transfer");
  const GaussianSpec target = transfer_target(c);

  c.mode = "finetune";
  c.gen_setup = "diag4";
  const RunRecord fine = run_transfer(c, spec, pretrained, target);
  write_run((ctx.workdir / "c8_finetune_diag4").string(), fine);
  const double fine_err = fine.aborted ? INFINITY : transfer_recovery_error(fine.store("generator"), target);

  c.mode = "frozen";
  c.gen_setup = "tri5";
  const RunRecord frozen = run_transfer(c, spec, pretrained, target);
  write_run((ctx.workdir / "c8_frozen_tri5").string(), frozen);
  const double frozen_err = frozen.aborted ? INFINITY : transfer_recovery_error(frozen.store("generator"), target);

  auto describe = [](const ParamStore& g) {
    const Matrix& a = g.at("A");
    const Matrix& b = g.at("b");
    return "A = [[" + fmt(a(0, 0), 3) + ", " + fmt(a(0, 1), 3) + "], [" + fmt(a(1, 0), 3) + ", " + fmt(a(1, 1), 3) +
           "]], b = (" + fmt(b(0, 0), 3) + ", " + fmt(b(0, 1), 3) + ")";
  };
  return {fine_err <= 0.1 && frozen_err > 0.1,
          "finetune diag4 max deviation " + fmt(fine_err) + " (need <= 0.1; " + describe(fine.store("generator")) +
              "); frozen tri5 max deviation " + fmt(frozen_err) + " (need > 0.1; " +
              describe(frozen.store("generator")) + ")"};
}

// ---------------------------------------------------------------- 9, 10, 11

Outcome ot_surrogate(const Context& ctx) {
  TrainConfig c = default_config("ot-surrogate");
  c.dim = 2;
  c.p_regime = c.q_regime = "train";
  const RunRecord r = train_ot_surrogate(c, family_from_config(c));
  write_run((ctx.workdir / "c9").string(), r);
  if (r.aborted) return {false, "training aborted: " + r.abort_reason};
  Rng rng(909);
  const double err = evaluate_ot_map(arch::dsr_ot_map(2), r.store("map"), MeasurePairFamily::regime(Regime::Train, 2),
                                     20, 200, c.test_samples, rng);
  return {err <= 0.15, "mean Euclidean deviation from the Gaussian OT map " + fmt(err) +
                           " on 20 held-out pairs x 200 points (need <= 0.15)"};
}

Outcome parameter_parity(const Context&) {
  const std::size_t vanilla = arch::vanilla_discriminator_2d().param_count();
  const std::size_t mc = arch::dmc_2d().param_count();
  const double gap = std::abs(static_cast<double>(mc) - static_cast<double>(vanilla)) / static_cast<double>(vanilla);
  return {vanilla == 33537 && mc == 33921 && gap < 0.02,
          "vanilla " + std::to_string(vanilla) + " (expect 33537), D_mc " + std::to_string(mc) +
              " (expect 33921), relative gap " + fmt(gap)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Outcome determinism(const Context& ctx) {
  if (ctx.cli.empty()) return {false, "no --cli binary given"};
  const fs::path root = ctx.workdir / "c11";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::string>> configs = {
      {"kl-surrogate", "iters=20\neval_every=10\npair_batch=4\nsamples=64\ntest_pairs=10\ntest_samples=64\n"},
      {"toy", "iters=500\neval_every=100\nvariant=mc\n"},
      {"gan2d", "iters=20\neval_every=10\nbatch=32\nmeasure_batch=32\nw1_samples=32\nw1_reps=2\n"},
      {"sde-infer", "iters=3\neval_every=1\nbatch=32\nmeasure_batch=32\nobservations=200\n"},
      {"transfer", "iters=20\neval_every=10\nsamples=64\npretrained=" +
                       (root / "kl-surrogate_a" / "seed_0" / "checkpoint.bin").string() + "\n"},
      {"ot-surrogate",
       "iters=20\neval_every=10\nwarmup=10\npair_batch=2\nsamples=64\ntest_pairs=2\ntest_points=20\ntest_samples=64\n"}};
  std::string detail;
  bool all = true;
  for (const auto& [name, text] : configs) {
    const fs::path cfg = root / (name + ".cfg");
    std::ofstream(cfg) << text;
    bool same = true;
    for (const char* run : {"a", "b"}) {
      const std::string cmd = "\"" + ctx.cli + "\" " + name + " --config \"" + cfg.string() + "\" --seeds 0,1 --out \"" +
                              (root / (name + "_" + run)).string() + "\" > \"" +
                              (root / (name + "_" + run + ".log")).string() + "\" 2>&1";
      if (std::system(cmd.c_str()) != 0) same = false;
    }
    for (const char* file : {"seed_0/metrics.csv", "seed_1/metrics.csv", "aggregate.csv"}) {
      const std::string a = slurp(root / (name + "_a") / file), b = slurp(root / (name + "_b") / file);
      same = same && !a.empty() && a == b;
    }
    same = same && slurp(root / (name + "_a") / "seed_0/metrics.csv") != slurp(root / (name + "_a") / "seed_1/metrics.csv");
    detail += " " + name + (same ? " identical" : " DIFFERS");
    all = all && same;
  }
  return {all, "two CLI runs per experiment (seeds 0,1):" + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only;
  Context ctx;
  std::string workdir = "acceptance_runs";
  app.add_option("--only", only, "Comma-separated criterion numbers (default: all)");
  app.add_option("--workdir", workdir, "Directory for run outputs");
  app.add_option("--cli", ctx.cli, "Path to the mcgan command-line binary");
  CLI11_PARSE(app, argc, argv);
  ctx.workdir = workdir;
  fs::create_directories(ctx.workdir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"toy oscillation", toy_oscillation},
      {"OMD decay ordering", omd_ordering},
      {"autodiff finite differences", autodiff_checks},
      {"exact W1 oracle", w1_oracle},
      {"2D GAN robustness", gan_robustness},
      {"SDE inference", sde_inference},
      {"KL surrogate", kl_surrogate},
      {"transfer learning", transfer},
      {"OT surrogate", ot_surrogate},
      {"parameter parity", parameter_parity},
      {"determinism", determinism}};

  std::vector<int> selected;
  if (only.empty()) {
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) selected.push_back(i);
  } else {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.push_back(std::stoi(item));
  }

  bool all = true;
  for (int n : selected) {
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "no criterion " << n << "\n";
      return 2;
    }
    const auto& [name, fn] = criteria[static_cast<std::size_t>(n - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << n << " (" << name << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << " [" << fmt(secs, 3) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
