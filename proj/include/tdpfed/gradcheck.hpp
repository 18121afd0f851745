#ifndef TDPFED_GRADCHECK_HPP_
#define TDPFED_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace tdpfed {

/// Finite-difference verification of the analytic gradients, run by the
/// check-grad command.
struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  /// Coordinates whose relative error exceeded the tolerance.
  std::vector<std::string> offending;
  bool passed() const { return offending.empty(); }
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Test hook: negate the theta term of the analytic factor gradient.
  bool flip_theta_sign = false;
};

/// |a - n| / max(1, |a|, |n|).
double gradient_rel_error(double analytic, double numeric);

/**
 * Factor gradient against central differences of
 * (lambda / 2) ||theta - [[A]]||^2, every entry of every factor. Extents are
 * drawn from [2, 4]; theta and factors from uniform(-1, 1).
 */
GradCheckCase check_factor_gradient(std::size_t modes, std::size_t rank,
                                    const GradCheckOptions& options);

/// Personalized-model backpropagation (conv, relu, linear, softmax CE and
/// prox) against central differences on a small model.
GradCheckCase check_backprop(const GradCheckOptions& options);

}  // namespace tdpfed

#endif  // TDPFED_GRADCHECK_HPP_
