#ifndef TDPFED_AGGREGATION_HPP_
#define TDPFED_AGGREGATION_HPP_

#include <cstdint>
#include <vector>

#include "tdpfed/cp_layers.hpp"

namespace tdpfed {

struct ClientContribution {
  std::size_t client_id = 0;
  TensorizedModel model;
  std::size_t batch_size = 0;  // |B_k|, AFM weight
  std::size_t shard_size = 0;  // |D_k|, ACT weight
};

struct AggregationInput {
  TensorizedModel global;
  std::vector<ClientContribution> clients;
};

/**
 * Factor-matrix aggregation. Per layer and mode:
 *   A_{t+1} = (1 - beta) A_t + beta * sum_k (|B_k| / sum |B|) A_k.
 * Biases use the same rule. Clients are reduced in ascending id order.
 */
TensorizedModel afm(const AggregationInput& input, double beta);

struct ActResult {
  /// (1 - beta) [[A_t]] + beta * sum_k (|D_k| / sum |D|) [[A_k]] per layer.
  std::vector<DenseTensor> composed;
  /// CP-ALS refit of composed at the model's ranks; biases as in afm.
  TensorizedModel factors;
};

/// Composed-tensor aggregation followed by a seeded CP-ALS refit.
ActResult act(const AggregationInput& input, double beta, std::size_t als_iters,
              std::uint64_t seed);

inline constexpr std::size_t kBytesPerReal = 8;

struct BroadcastPayload {
  TensorizedModel factors;
  std::vector<DenseTensor> composed;
  /// Client to server, per client: factors and biases.
  std::size_t uplink_bytes = 0;
  /// Server to client, per client: factors, biases and composed tensors.
  std::size_t downlink_bytes = 0;
};

BroadcastPayload make_broadcast(const TensorizedModel& factors);

std::size_t uplink_reals(const TensorizedModel& model);
std::size_t downlink_reals(const TensorizedModel& model);

}  // namespace tdpfed

#endif  // TDPFED_AGGREGATION_HPP_
