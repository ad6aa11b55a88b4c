// Command-line front end: one subcommand per experiment plus eval-w1 and check.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "mcgan/distributions.hpp"
#include "mcgan/metrics.hpp"
#include "mcgan/selfcheck.hpp"
#include "mcgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace mcgan;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// key=value lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_text(const TrainConfig& cfg) {
  std::string text;
  for (const auto& [k, v] : cfg.to_kv()) text += k + "=" + v + "\n";
  return text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    TrainConfig probe;
    probe.apply("seed", trim(item));
    out.push_back(probe.seed);
  }
  if (out.empty()) throw ConfigError("--seeds expects a comma-separated list");
  return out;
}

int thread_cap() {
  if (const char* env = std::getenv("MGL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Mean and sample standard deviation across seeds per (step, metric).
void write_aggregate(const std::string& path, const std::vector<RunRecord>& runs) {
  std::vector<std::pair<long, std::string>> order;
  std::map<std::pair<long, std::string>, std::vector<double>> values;
  for (const auto& r : runs)
    for (const auto& row : r.history.rows) {
      const auto key = std::make_pair(row.step, row.name);
      if (!values.count(key)) order.push_back(key);
      values[key].push_back(row.value);
    }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,name,mean,std,count\n";
  char buf[128];
  for (const auto& key : order) {
    const auto& v = values[key];
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", mean, sd);
    out << key.first << "," << key.second << "," << buf << "," << v.size() << "\n";
  }
}

void print_summary(const RunRecord& r) {
  std::map<std::string, std::pair<long, double>> last;
  for (const auto& row : r.history.rows) last[row.name] = {row.step, row.value};
  std::cout << "seed " << r.config.seed << ": " << r.iterations_done << " iterations in " << r.wall_seconds << " s";
  if (r.aborted) std::cout << " (aborted: " << r.abort_reason << ")";
  std::cout << "\n";
  for (const auto& [name, v] : last) std::cout << "  " << name << " = " << v.second << " @ " << v.first << "\n";
}

struct ExperimentOptions {
  std::string config_file;
  std::string out;
  std::string seeds;
  std::string betas;
  bool dry_run = false;
  std::vector<std::pair<std::string, std::string>> flags;  // key, value in argv order
};

int run_experiment_command(const std::string& name, const ExperimentOptions& opts) {
  TrainConfig cfg = default_config(name);
  try {
    if (!opts.config_file.empty())
      for (const auto& [k, v] : read_config_file(opts.config_file)) {
        if (k == "experiment" && v != name) throw ConfigError("config file is for experiment '" + v + "', not " + name);
        cfg.apply(k, v);
      }
    for (const auto& [k, v] : opts.flags) cfg.apply(k, v);
    if (!opts.betas.empty()) {
      const auto comma = opts.betas.find(',');
      if (comma == std::string::npos) throw ConfigError("--betas expects b1,b2");
      cfg.apply("beta1", opts.betas.substr(0, comma));
      cfg.apply("beta2", opts.betas.substr(comma + 1));
    }
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::vector<std::uint64_t> seeds = opts.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_seeds(opts.seeds);
  const std::string out = opts.out.empty() ? "runs/" + name : opts.out;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(config_text(cfg))));

  std::ostringstream manifest;
  manifest << "subcommand=" << name << "\n"
           << "config_file=" << opts.config_file << "\n"
           << "config_hash=" << hash << "\n"
           << "code_version=" << kCodeVersion << "\n"
           << "out=" << out << "\n"
           << "seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) manifest << (i ? "," : "") << seeds[i];
  manifest << "\n" << config_text(cfg);
  if (opts.dry_run) {
    std::cout << manifest.str();
    return 0;
  }

  fs::create_directories(out);
  std::vector<RunRecord> runs(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex print;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      TrainConfig c = cfg;
      c.seed = seeds[i];
      try {
        runs[i] = run_experiment(c);
        write_run((fs::path(out) / ("seed_" + std::to_string(seeds[i]))).string(), runs[i]);
        std::lock_guard<std::mutex> lock(print);
        print_summary(runs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::min<int>(thread_cap(), static_cast<int>(seeds.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (!errors[i].empty()) throw ConfigError("seed " + std::to_string(seeds[i]) + ": " + errors[i]);
  write_aggregate((fs::path(out) / "aggregate.csv").string(), runs);
  std::ofstream((fs::path(out) / "manifest.txt").string()) << manifest.str();

  int code = 0;
  for (const auto& r : runs)
    if (r.aborted) {
      std::cerr << "run aborted (seed " << r.config.seed << "): " << r.abort_reason << "\n";
      code = 2;
    }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure-conditional GAN discriminators: experiments and checks"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> experiments = {
      {"toy", "Two-player toy game trajectories"},
      {"gan2d", "2D GAN with vanilla or measure-conditional discriminator"},
      {"sde-infer", "Infer SDE coefficients from particle snapshots"},
      {"kl-surrogate", "Train a KL-divergence surrogate over Gaussian pairs"},
      {"transfer", "Train an affine generator against a pretrained KL surrogate"},
      {"ot-surrogate", "Train a regularized-OT map surrogate"}};

  std::map<std::string, ExperimentOptions> opts;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : experiments) {
    const TrainConfig reference = default_config(name);
    CLI::App* sub = app.add_subcommand(name, help);
    subs[name] = sub;
    ExperimentOptions& o = opts[name];
    sub->add_option("--config", o.config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (default runs/<subcommand>)");
    sub->add_option("--seeds", o.seeds, "Comma-separated seed list; one run per seed");
    sub->add_option("--betas", o.betas, "Adam betas as b1,b2");
    sub->add_flag("--dry-run", o.dry_run, "Print the resolved manifest and exit");
    for (const auto& [key, value] : reference.to_kv()) {
      if (key == "experiment") continue;
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      sub->add_option_function<std::string>(
             names, [&o, key = key](const std::string& v) { o.flags.emplace_back(key, v); },
             "default " + (value.empty() ? std::string("(none)") : value))
          ->type_name("VALUE");
    }
  }

  std::string w1_a, w1_b;
  CLI::App* w1 = app.add_subcommand("eval-w1", "Exact W1 between two equal-size sample CSVs");
  w1->add_option("--a", w1_a, "First sample CSV")->required()->check(CLI::ExistingFile);
  w1->add_option("--b", w1_b, "Second sample CSV")->required()->check(CLI::ExistingFile);

  std::uint64_t check_seed = 0;
  CLI::App* check = app.add_subcommand("check", "Run the oracle and property checks");
  check->add_option("--seed", check_seed, "Seed for random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) return run_experiment_command(name, opts[name]);
    if (w1->parsed()) {
      const double v = exact_w1(read_samples_csv(w1_a), read_samples_csv(w1_b));
      std::printf("%.17g\n", v);
      return 0;
    }
    if (check->parsed()) {
      bool ok = true;
      for (const auto& r : run_self_checks(check_seed)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
