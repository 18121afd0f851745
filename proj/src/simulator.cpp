#include "tdpfed/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <thread>

#include "tdpfed/errors.hpp"

namespace tdpfed {

std::string to_string(Strategy s) { return s == Strategy::afm ? "afm" : "act"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "afm") return Strategy::afm;
  if (s == "act") return Strategy::act;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

void SimConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
  };
  if (clients < 1) fail("[fl].K", "must be >= 1");
  if (sampled < 1) fail("[fl].S", "must be >= 1");
  if (sampled > clients) fail("[fl].S", "must not exceed K");
  if (rounds < 1) fail("[fl].T", "must be >= 1");
  if (hyper.batch_size < 1) fail("[fl].batch_size", "must be >= 1");
  if (!(hyper.lambda > 0.0)) fail("[opt].lambda", "must be > 0");
  if (!(beta > 0.0)) fail("[opt].beta", "must be > 0");
  if (!(hyper.eta >= 0.0)) fail("[opt].eta", "must be >= 0");
  if (!(hyper.eta_p >= 0.0)) fail("[opt].eta_p", "must be >= 0");
  if (hyper.s < 1) fail("[opt].s", "must be >= 1");
  if (hyper.s_prime < 1) fail("[opt].s_prime", "must be >= 1");
  if (eval_every < 1) fail("[experiment].eval_every", "must be >= 1");
  if (als_iters < 1) fail("[experiment].als_iters", "must be >= 1");
  if (data.classes_per_client < 1) fail("[data].classes_per_client", "must be >= 1");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    fail("[model]", e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics CSV

std::string metrics_csv_header() {
  return "round,acc_personalized_mean,acc_personalized_std,acc_global,loss_train_mean,"
         "prox_gap_mean,uplink_bytes,downlink_bytes,wall_s";
}

namespace {

std::string real17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_row(const RoundMetrics& m) {
  return std::to_string(m.round) + "," + real17(m.acc_personalized_mean) + "," +
         real17(m.acc_personalized_std) + "," + real17(m.acc_global) + "," +
         real17(m.loss_train_mean) + "," + real17(m.prox_gap_mean) + "," +
         std::to_string(m.uplink_bytes) + "," + std::to_string(m.downlink_bytes) + "," +
         real17(m.wall_s);
}

// ---------------------------------------------------------------------------

TensorizedModel init_global(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  TensorizedModel m;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    const double bound = 0.5 / std::sqrt(static_cast<double>(s.rank));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<Matrix> factors;
    for (std::size_t n = 0; n < s.dense_shape.size(); ++n) {
      Rng rng(derive_seed(seed, "init/global", l, n));
      Matrix a(s.dense_shape[n], s.rank);
      for (auto& v : a.data()) v = u(rng);
      factors.push_back(std::move(a));
    }
    m.layers.push_back({s.kind, KruskalFactors(std::move(factors)),
                        std::vector<double>(s.bias_size(), 0.0)});
  }
  return m;
}

std::vector<std::size_t> sample_clients(std::size_t clients, std::size_t sampled,
                                        std::size_t round, std::uint64_t seed) {
  if (sampled > clients)
    throw std::invalid_argument("sample_clients: S=" + std::to_string(sampled) +
                                " exceeds K=" + std::to_string(clients));
  std::vector<std::size_t> ids(clients);
  for (std::size_t i = 0; i < clients; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, "server/sample", round));
  for (std::size_t i = 0; i < sampled; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(sampled);
  std::sort(ids.begin(), ids.end());
  return ids;
}

double accuracy(const ModelSpec& spec, const PersonalizedModel& model, const Dataset& data,
                std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("accuracy: empty shard");
  const Batch b = data.gather(indices);
  const auto pred = predict(model_forward(spec, model, b.features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

Evaluation evaluate(const ModelSpec& spec, const std::vector<const PersonalizedModel*>& personalized,
                    const TensorizedModel& global, const Dataset& test,
                    const std::vector<std::vector<std::size_t>>& test_shards) {
  if (personalized.size() != test_shards.size())
    throw std::invalid_argument("evaluate: one test shard per client required");
  Evaluation ev;
  const PersonalizedModel composed = compose(global);
  double weighted = 0.0;
  std::size_t total = 0;
  for (std::size_t k = 0; k < test_shards.size(); ++k) {
    const auto& shard = test_shards[k];
    if (shard.empty())
      throw std::invalid_argument("evaluate: client " + std::to_string(k) + " has an empty test shard");
    ev.personalized.push_back(accuracy(spec, *personalized[k], test, shard));
    weighted += accuracy(spec, composed, test, shard) * static_cast<double>(shard.size());
    total += shard.size();
  }
  ev.global = weighted / static_cast<double>(total);
  return ev;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("TDPFED_THREADS");
  if (!v || !*v) return 0;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0') throw ConfigError("TDPFED_THREADS: expected a non-negative integer");
  return n;
}

namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. If any calls
/// throw, the exception of the lowest index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void check_finite(const TensorizedModel& m, std::size_t round, std::size_t server_id) {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (const auto& a : m.layers[l].factors.factors)
      for (double v : a.data())
        if (!std::isfinite(v)) throw NumericError(round, server_id, l, "aggregated factor");
  }
}

}  // namespace

SimResult run(const SimConfig& config, const Dataset& train, const Dataset& test,
              const MetricsSink& sink) {
  config.validate();
  const auto& spec = config.model;
  if (train.dim() != spec.input_size())
    throw ConfigError("[model]: input size " + std::to_string(spec.input_size()) +
                      " does not match data dimension " + std::to_string(train.dim()));
  if (train.num_classes > spec.num_classes())
    throw ConfigError("[model]: " + std::to_string(spec.num_classes()) +
                      " outputs cannot represent " + std::to_string(train.num_classes) +
                      " classes");

  Partition partition;
  try {
    partition = partition_noniid(train, test, config.clients, config.data.classes_per_client,
                                 config.seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[data]: ") + e.what());
  }

  SimResult result;
  result.global = init_global(spec, derive_seed(config.seed, "global"));
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < config.clients; ++k)
    clients.push_back(
        make_client(k, spec, partition.clients[k], result.global, config.seed, config.hyper));

  std::vector<std::vector<std::size_t>> test_shards;
  for (const auto& c : partition.clients) test_shards.push_back(c.test);

  const std::size_t threads =
      config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  const auto start = std::chrono::steady_clock::now();

  std::vector<ClientUpdateResult> updates(config.clients);
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const BroadcastPayload payload = make_broadcast(result.global);
    const auto chosen = sample_clients(config.clients, config.sampled, t, config.seed);

    std::vector<std::size_t> trained;
    if (config.train_only_sampled) {
      trained = chosen;
    } else {
      trained.resize(config.clients);
      for (std::size_t k = 0; k < config.clients; ++k) trained[k] = k;
    }
    parallel_for(trained.size(), threads, [&](std::size_t i) {
      const std::size_t k = trained[i];
      updates[k] = client_update(clients[k], spec, train, payload.factors, config.hyper, t);
    });

    AggregationInput input;
    input.global = result.global;
    for (std::size_t k : chosen)
      input.clients.push_back({k, updates[k].factors, config.hyper.batch_size,
                               partition.clients[k].train.size()});
    if (config.strategy == Strategy::afm)
      result.global = afm(input, config.beta);
    else
      result.global =
          act(input, config.beta, config.als_iters, derive_seed(config.seed, "act", t)).factors;
    check_finite(result.global, t, config.clients);

    if (t % config.eval_every != 0 && t != config.rounds) continue;

    RoundMetrics m;
    m.round = t;
    std::vector<const PersonalizedModel*> thetas;
    for (const auto& c : clients) thetas.push_back(&c.theta);
    const Evaluation ev = evaluate(spec, thetas, result.global, test, test_shards);
    double sum = 0.0;
    for (double a : ev.personalized) sum += a;
    m.acc_personalized_mean = sum / static_cast<double>(ev.personalized.size());
    double var = 0.0;
    for (double a : ev.personalized) var += (a - m.acc_personalized_mean) * (a - m.acc_personalized_mean);
    m.acc_personalized_std = std::sqrt(var / static_cast<double>(ev.personalized.size()));
    m.acc_global = ev.global;
    double loss = 0.0, gap = 0.0;
    for (std::size_t k : trained) {
      loss += updates[k].mean_loss;
      gap += updates[k].prox_gap;
    }
    m.loss_train_mean = loss / static_cast<double>(trained.size());
    m.prox_gap_mean = gap / static_cast<double>(trained.size());
    m.uplink_bytes = config.sampled * payload.uplink_bytes;
    m.downlink_bytes = config.clients * payload.downlink_bytes;
    if (config.record_wall_time)
      m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(m);
    if (sink) sink(m);
  }
  return result;
}

SimResult run(const SimConfig& config, const MetricsSink& sink) {
  config.validate();
  auto [train, test] = load_data(config.data, config.seed);
  return run(config, train, test, sink);
}

}  // namespace tdpfed
