#ifndef TDPFED_OPTIMIZER_HPP_
#define TDPFED_OPTIMIZER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tdpfed {

enum class OptimizerKind { sgd, nesterov, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/**
 * Optimizer state for one parameter group.
 *
 * nesterov keeps a velocity v and applies
 *   v' = mu v - lr g,  p += -mu v + (1 + mu) v'.
 * adam is the bias-corrected form of Kingma and Ba.
 */
class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(const OptimizerConfig& config, std::size_t size);

  void step(std::span<double> params, std::span<const double> grad);
  void reset();
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  std::size_t size() const { return size_; }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::size_t size_ = 0;
  std::vector<double> first_;   // velocity (nesterov) or first moment (adam)
  std::vector<double> second_;  // adam second moment
};

}  // namespace tdpfed

#endif  // TDPFED_OPTIMIZER_HPP_
