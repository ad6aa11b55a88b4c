#pragma once

#include <string>
#include <vector>

#include "mcgan/nn.hpp"

namespace mcgan {

enum class OptimizerKind { GD, OMD, Adam, OptimisticAdam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

enum class Direction { Minimize, Maximize };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// Applies one update to `params` using `grads` aligned with its entries.
  void step(ParamStore& params, const std::vector<Matrix>& grads, Direction dir);

  const OptimizerConfig& config() const { return cfg_; }
  /// Changes the step size; moment estimates are kept.
  void set_lr(double lr);
  long steps() const { return t_; }

  /// Slot arrays (previous step, moments) in a fixed order, for checkpoints.
  std::vector<Matrix> slots() const;
  void restore(long t, const std::vector<Matrix>& slots);

 private:
  void ensure_slots(const ParamStore& params);

  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> prev_;  // previous raw update (OMD, OptimisticAdam)
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Clamps every entry to [-c, c].
void clip_weights(ParamStore& params, double c);

}  // namespace mcgan
