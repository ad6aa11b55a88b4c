#include "mcgan/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mcgan {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::GD: return "gd";
    case OptimizerKind::OMD: return "omd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::OptimisticAdam: return "optimistic_adam";
  }
  return "?";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "gd") return OptimizerKind::GD;
  if (s == "omd") return OptimizerKind::OMD;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "optimistic_adam" || s == "oadam") return OptimizerKind::OptimisticAdam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr >= 0)) throw std::invalid_argument("optimizer: learning rate must be >= 0");
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  if (!(cfg_.eps > 0)) throw std::invalid_argument("optimizer: eps must be positive");
}

void Optimizer::ensure_slots(const ParamStore& params) {
  if (!prev_.empty()) {
    if (prev_.size() != params.size()) throw std::invalid_argument("optimizer: parameter set changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (prev_[i].rows() != params.entries[i].value.rows() || prev_[i].cols() != params.entries[i].value.cols())
        throw std::invalid_argument("optimizer: parameter shape changed: " + params.entries[i].name);
    return;
  }
  for (const auto& e : params.entries) {
    prev_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    m_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    v_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  }
}

void Optimizer::step(ParamStore& params, const std::vector<Matrix>& grads, Direction dir) {
  if (grads.size() != params.size())
    throw std::invalid_argument("optimizer: expected " + std::to_string(params.size()) + " gradients, got " +
                                std::to_string(grads.size()));
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i].rows() != params.entries[i].value.rows() || grads[i].cols() != params.entries[i].value.cols())
      throw std::invalid_argument("optimizer: gradient shape mismatch for " + params.entries[i].name);
  ensure_slots(params);
  ++t_;
  const double sign = dir == Direction::Minimize ? -1.0 : 1.0;
  const double lr = cfg_.lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Matrix& p = params.entries[i].value;
    const Matrix& g = grads[i];
    switch (cfg_.kind) {
      case OptimizerKind::GD:
        p += sign * lr * g;
        break;
      case OptimizerKind::OMD:
        p += sign * (2.0 * lr * g - lr * prev_[i]);
        prev_[i] = g;
        break;
      case OptimizerKind::Adam:
      case OptimizerKind::OptimisticAdam: {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const Matrix s =
            ((m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.eps)).matrix();
        if (cfg_.kind == OptimizerKind::Adam) {
          p += sign * lr * s;
        } else {
          p += sign * (2.0 * lr * s - lr * prev_[i]);
          prev_[i] = s;
        }
        break;
      }
    }
  }
}

std::vector<Matrix> Optimizer::slots() const {
  std::vector<Matrix> out;
  out.insert(out.end(), prev_.begin(), prev_.end());
  out.insert(out.end(), m_.begin(), m_.end());
  out.insert(out.end(), v_.begin(), v_.end());
  return out;
}

void Optimizer::restore(long t, const std::vector<Matrix>& slots) {
  if (slots.size() % 3 != 0) throw std::invalid_argument("optimizer: malformed slot list");
  const std::size_t n = slots.size() / 3;
  prev_.assign(slots.begin(), slots.begin() + static_cast<long>(n));
  m_.assign(slots.begin() + static_cast<long>(n), slots.begin() + static_cast<long>(2 * n));
  v_.assign(slots.begin() + static_cast<long>(2 * n), slots.end());
  t_ = t;
}

void clip_weights(ParamStore& params, double c) {
  if (!(c > 0)) throw std::invalid_argument("clip_weights: bound must be positive");
  for (auto& e : params.entries) e.value = e.value.cwiseMax(-c).cwiseMin(c);
}

void Optimizer::set_lr(double lr) {
  if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer: learning rate must be finite and >= 0");
  cfg_.lr = lr;
}

}  // namespace mcgan
