#ifndef TDPFED_OBJECTIVE_HPP_
#define TDPFED_OBJECTIVE_HPP_

#include <span>
#include <vector>

#include "tdpfed/cp_layers.hpp"
#include "tdpfed/tensor.hpp"

namespace tdpfed {

/// Mini-batch: one sample per row of features.
struct Batch {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

struct RegularizedLoss {
  double data_loss = 0.0;   // mean cross-entropy, nats
  double prox_term = 0.0;   // (lambda / 2) sum_l ||theta_l - [[A_l]]||^2
  double total = 0.0;
};

struct LossAndGradient {
  RegularizedLoss loss;
  PersonalizedModel grad;
};

/// Mean softmax cross-entropy of the dense model over the batch.
double data_loss(const ModelSpec& spec, const PersonalizedModel& theta, const Batch& batch);

/// (lambda / 2) sum_l ||theta_l - composed_l||_F^2. Biases are not included.
double prox_term(const PersonalizedModel& theta, std::span<const DenseTensor> composed,
                 double lambda);

/// Mini-batch personalized objective: data loss plus the prox coupling.
RegularizedLoss personalized_loss(const ModelSpec& spec, const PersonalizedModel& theta,
                                  const TensorizedModel& factors, const Batch& batch,
                                  double lambda);

PersonalizedModel personalized_grad(const ModelSpec& spec, const PersonalizedModel& theta,
                                    const TensorizedModel& factors, const Batch& batch,
                                    double lambda);

/**
 * Loss and gradient in one pass, with the reconstructed weights
 * precomputed (they stay fixed while the personalized model trains).
 * Weight gradients carry lambda (theta - composed); bias gradients only
 * the data term.
 */
LossAndGradient personalized_loss_grad(const ModelSpec& spec, const PersonalizedModel& theta,
                                       std::span<const DenseTensor> composed, const Batch& batch,
                                       double lambda);

double squared_norm(const PersonalizedModel& m);

/// True iff the squared norm of the full personalized gradient is <= nu.
bool grad_check_criterion(const ModelSpec& spec, const PersonalizedModel& theta,
                          const TensorizedModel& factors, const Batch& batch, double lambda,
                          double nu);

/**
 * Gradient of (lambda / 2) ||theta - [[A]]||^2 with respect to A^(n):
 *
 *   lambda * (-theta_(n) H_n + A^(n) V_n)
 *
 * where H_n is the Khatri-Rao chain of all other factors in descending
 * mode order and V_n the Hadamard product of their Gram matrices.
 */
Matrix factor_gradient(const DenseTensor& theta_layer, const KruskalFactors& factors,
                       std::size_t mode, double lambda);

/// Same, with the mode-n unfolding of theta supplied by the caller.
Matrix factor_gradient_unfolded(const Matrix& theta_unfolded, const KruskalFactors& factors,
                                std::size_t mode, double lambda);

/// (lambda / 2) ||theta_layer - [[A]]||^2 for one layer.
double layer_prox(const DenseTensor& theta_layer, const KruskalFactors& factors, double lambda);

/// data_loss_at_theta + (lambda / 2) sum_l ||theta_l - [[A_l]]||^2.
double local_objective_at_theta(const PersonalizedModel& theta_tilde,
                                const TensorizedModel& factors, double lambda,
                                double data_loss_at_theta);

}  // namespace tdpfed

#endif  // TDPFED_OBJECTIVE_HPP_
