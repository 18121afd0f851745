#ifndef TDPFED_SIMULATOR_HPP_
#define TDPFED_SIMULATOR_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdpfed/aggregation.hpp"
#include "tdpfed/cp_layers.hpp"
#include "tdpfed/data.hpp"
#include "tdpfed/local_training.hpp"

namespace tdpfed {

enum class Strategy { afm, act };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct SimConfig {
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::afm;
  std::size_t clients = 20;   // K
  std::size_t sampled = 20;   // S
  std::size_t rounds = 800;   // T
  double beta = 1.0;
  Hyper hyper;
  ModelSpec model = dnn_spec(44, 5);
  DataConfig data;
  std::size_t eval_every = 5;
  bool train_only_sampled = false;
  std::size_t als_iters = 25;
  /// Write measured wall-clock seconds into metrics; zero otherwise so
  /// that metrics are reproducible byte for byte.
  bool record_wall_time = false;
  /// Worker threads for client updates; 0 picks the hardware concurrency.
  std::size_t threads = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const SimConfig&) const = default;
};

struct RoundMetrics {
  std::size_t round = 0;
  double acc_personalized_mean = 0.0;
  double acc_personalized_std = 0.0;
  double acc_global = 0.0;
  double loss_train_mean = 0.0;
  double prox_gap_mean = 0.0;
  std::size_t uplink_bytes = 0;
  std::size_t downlink_bytes = 0;
  double wall_s = 0.0;
};

/// Column names of the metrics CSV, comma separated, no newline.
std::string metrics_csv_header();
/// One CSV row; reals use 17 significant digits.
std::string metrics_csv_row(const RoundMetrics& m);

/// Seeded uniform(-0.5 / sqrt(R), 0.5 / sqrt(R)) factors, zero biases.
TensorizedModel init_global(const ModelSpec& spec, std::uint64_t seed);

/// S of K client ids drawn without replacement for this round, ascending.
std::vector<std::size_t> sample_clients(std::size_t clients, std::size_t sampled,
                                        std::size_t round, std::uint64_t seed);

/// Fraction of samples in indices that the dense model classifies correctly.
double accuracy(const ModelSpec& spec, const PersonalizedModel& model, const Dataset& data,
                std::span<const std::size_t> indices);

struct Evaluation {
  std::vector<double> personalized;  // per client, on its own test shard
  double global = 0.0;               // shard-size weighted
};

Evaluation evaluate(const ModelSpec& spec, const std::vector<const PersonalizedModel*>& personalized,
                    const TensorizedModel& global, const Dataset& test,
                    const std::vector<std::vector<std::size_t>>& test_shards);

struct SimResult {
  std::vector<RoundMetrics> metrics;
  TensorizedModel global;
};

using MetricsSink = std::function<void(const RoundMetrics&)>;

/// Runs the federated loop on already loaded data.
SimResult run(const SimConfig& config, const Dataset& train, const Dataset& test,
              const MetricsSink& sink = {});

/// Loads data per config.data, then runs.
SimResult run(const SimConfig& config, const MetricsSink& sink = {});

/// Worker count from TDPFED_THREADS (0 or unset means automatic).
std::size_t threads_from_env();

}  // namespace tdpfed

#endif  // TDPFED_SIMULATOR_HPP_
