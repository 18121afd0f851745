#include "tdpfed/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tdpfed {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::nesterov: return "nesterov";
    case OptimizerKind::adam: return "adam";
  }
  return "sgd";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "nesterov") return OptimizerKind::nesterov;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

OptimizerState::OptimizerState(const OptimizerConfig& config, std::size_t size) : config_(config) {
  if (config.learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  if (config.kind != OptimizerKind::sgd) first_.assign(size, 0.0);
  if (config.kind == OptimizerKind::adam) second_.assign(size, 0.0);
  size_ = size;
}

void OptimizerState::reset() {
  steps_ = 0;
  std::fill(first_.begin(), first_.end(), 0.0);
  std::fill(second_.begin(), second_.end(), 0.0);
}

void OptimizerState::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size() || params.size() != size_)
    throw std::invalid_argument("optimizer: parameter/gradient size mismatch");
  ++steps_;
  const double lr = config_.learning_rate;
  switch (config_.kind) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      break;
    case OptimizerKind::nesterov: {
      const double mu = config_.momentum;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double v_old = first_[i];
        const double v_new = mu * v_old - lr * grad[i];
        first_[i] = v_new;
        params[i] += -mu * v_old + (1.0 + mu) * v_new;
      }
      break;
    }
    case OptimizerKind::adam: {
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double t = static_cast<double>(steps_);
      const double c1 = 1.0 - std::pow(b1, t);
      const double c2 = 1.0 - std::pow(b2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        first_[i] = b1 * first_[i] + (1.0 - b1) * grad[i];
        second_[i] = b2 * second_[i] + (1.0 - b2) * grad[i] * grad[i];
        const double m_hat = first_[i] / c1;
        const double v_hat = second_[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
      break;
    }
  }
}

}  // namespace tdpfed
