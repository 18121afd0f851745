#ifndef TDPFED_LOCAL_TRAINING_HPP_
#define TDPFED_LOCAL_TRAINING_HPP_

#include <cstdint>
#include <vector>

#include "tdpfed/cp_layers.hpp"
#include "tdpfed/data.hpp"
#include "tdpfed/objective.hpp"
#include "tdpfed/optimizer.hpp"
#include "tdpfed/rng.hpp"

namespace tdpfed {

/// Client-side hyperparameters.
struct Hyper {
  double lambda = 12.0;
  double eta = 0.0008;   // factor learning rate
  double eta_p = 0.08;   // personalized learning rate
  std::size_t s = 5;        // personalized steps per local round
  std::size_t s_prime = 17; // factor sweeps per local round
  std::size_t tau = 23;     // local rounds per global round
  std::size_t batch_size = 20;
  OptimizerKind personalized_optimizer = OptimizerKind::nesterov;
  OptimizerKind factor_optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double nu = 1e-2;  // stationarity level, logged only

  bool operator==(const Hyper&) const = default;
};

struct ClientState {
  std::size_t id = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  PersonalizedModel theta;
  TensorizedModel factors;
  /// One state per weight and per bias of theta, in layer order.
  std::vector<OptimizerState> theta_opt;
  /// factor_opt[layer][mode].
  std::vector<std::vector<OptimizerState>> factor_opt;
  Rng rng;
};

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
PersonalizedModel init_personalized(const ModelSpec& spec, std::uint64_t seed);

ClientState make_client(std::size_t id, const ModelSpec& spec, const ClientShard& shard,
                        const TensorizedModel& initial_factors, std::uint64_t global_seed,
                        const Hyper& hyper);

struct PersonalizedStats {
  RegularizedLoss first;  // objective before the first step
  RegularizedLoss last;   // objective before the last step
  double grad_norm_sq = 0.0;  // at the last step
  bool stationary = false;    // grad_norm_sq <= nu
};

/// s optimizer steps on the mini-batch objective with the factors frozen.
PersonalizedStats train_personalized(ClientState& c, const ModelSpec& spec, const Batch& batch,
                                     double lambda, std::size_t s, double eta_p, double nu = 1e-2);

/**
 * s_prime alternating sweeps over the factors: layers in order, modes in
 * ascending order, one optimizer step per factor using the gradient at the
 * current, partially updated, factors.
 */
void train_factors(ClientState& c, const PersonalizedModel& theta_tilde, double lambda,
                   std::size_t s_prime, double eta);

struct ClientUpdateResult {
  TensorizedModel factors;
  double mean_loss = 0.0;   // mean personalized objective over the local rounds
  double prox_gap = 0.0;    // sqrt(sum_l ||theta_l - [[A_l]]||^2) after the update
  bool sampled_with_replacement = false;
};

/**
 * One global round on a client: adopt the broadcast factors, reset the
 * factor optimizer, then tau local rounds of (sample batch, train
 * personalized, train factors). theta is kept across rounds.
 * Throws NumericError on non-finite loss or factors.
 */
ClientUpdateResult client_update(ClientState& c, const ModelSpec& spec, const Dataset& train,
                                 const TensorizedModel& broadcast, const Hyper& hyper,
                                 std::size_t round = 0);

double prox_gap(const PersonalizedModel& theta, const TensorizedModel& factors);

}  // namespace tdpfed

#endif  // TDPFED_LOCAL_TRAINING_HPP_
