#include "tdpfed/aggregation.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "tdpfed/rng.hpp"

namespace tdpfed {

namespace {

void check_input(const AggregationInput& input, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("aggregation: beta must be positive");
  if (input.clients.empty()) throw std::invalid_argument("aggregation: no client results");
  const auto& g = input.global;
  for (const auto& c : input.clients) {
    const auto& m = c.model;
    const std::string who = "aggregation: client " + std::to_string(c.client_id);
    if (m.layers.size() != g.layers.size()) throw std::invalid_argument(who + " layer count mismatch");
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      const auto& a = m.layers[l];
      const auto& b = g.layers[l];
      if (a.kind != b.kind || a.factors.target_shape() != b.factors.target_shape() ||
          a.factors.rank() != b.factors.rank() || a.bias.size() != b.bias.size())
        throw std::invalid_argument(who + " layer " + std::to_string(l) + " shape mismatch");
    }
  }
}

std::vector<const ClientContribution*> by_id(const AggregationInput& input) {
  std::vector<const ClientContribution*> out;
  for (const auto& c : input.clients) out.push_back(&c);
  std::stable_sort(out.begin(), out.end(),
                   [](auto* a, auto* b) { return a->client_id < b->client_id; });
  return out;
}

std::vector<double> normalized(const std::vector<const ClientContribution*>& clients,
                               std::size_t ClientContribution::*field) {
  double total = 0.0;
  for (auto* c : clients) {
    if (c->*field == 0) throw std::invalid_argument("aggregation: client weights must be positive");
    total += static_cast<double>(c->*field);
  }
  std::vector<double> w;
  for (auto* c : clients) w.push_back(static_cast<double>(c->*field) / total);
  return w;
}

/// out = (1 - beta) out + beta * sum_k w_k x_k
void mix(std::vector<double>& out, const std::vector<const std::vector<double>*>& xs,
         const std::vector<double>& w, double beta) {
  std::vector<double> acc(out.size(), 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w[k] * (*xs[k])[i];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - beta) * out[i] + beta * acc[i];
}

void mix_biases(TensorizedModel& out, const std::vector<const ClientContribution*>& clients,
                const std::vector<double>& w, double beta) {
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    std::vector<const std::vector<double>*> xs;
    for (auto* c : clients) xs.push_back(&c->model.layers[l].bias);
    mix(out.layers[l].bias, xs, w, beta);
  }
}

}  // namespace

TensorizedModel afm(const AggregationInput& input, double beta) {
  check_input(input, beta);
  const auto clients = by_id(input);
  const auto w = normalized(clients, &ClientContribution::batch_size);
  TensorizedModel out = input.global;
  for (std::size_t l = 0; l < out.layers.size(); ++l)
    for (std::size_t n = 0; n < out.layers[l].factors.order(); ++n) {
      std::vector<const std::vector<double>*> xs;
      for (auto* c : clients) xs.push_back(&c->model.layers[l].factors.factors[n].data());
      mix(out.layers[l].factors.factors[n].data(), xs, w, beta);
    }
  mix_biases(out, clients, w, beta);
  return out;
}

ActResult act(const AggregationInput& input, double beta, std::size_t als_iters,
              std::uint64_t seed) {
  check_input(input, beta);
  const auto clients = by_id(input);
  const auto w = normalized(clients, &ClientContribution::shard_size);
  ActResult out;
  out.factors = input.global;
  for (std::size_t l = 0; l < input.global.layers.size(); ++l) {
    DenseTensor composed = kruskal_reconstruct(input.global.layers[l].factors);
    std::vector<DenseTensor> client_tensors;
    for (auto* c : clients) client_tensors.push_back(kruskal_reconstruct(c->model.layers[l].factors));
    std::vector<const std::vector<double>*> xs;
    for (const auto& t : client_tensors) xs.push_back(&t.data());
    mix(composed.data(), xs, w, beta);
    out.factors.layers[l].factors =
        cp_als(composed, input.global.layers[l].factors.rank(), als_iters,
               derive_seed(seed, "act/refit", l))
            .factors;
    out.composed.push_back(std::move(composed));
  }
  mix_biases(out.factors, clients, normalized(clients, &ClientContribution::batch_size), beta);
  return out;
}

std::size_t uplink_reals(const TensorizedModel& model) { return model.parameter_count(); }

std::size_t downlink_reals(const TensorizedModel& model) {
  std::size_t n = model.parameter_count();
  for (const auto& l : model.layers) n += shape_size(l.factors.target_shape());
  return n;
}

BroadcastPayload make_broadcast(const TensorizedModel& factors) {
  BroadcastPayload p;
  p.factors = factors;
  for (const auto& l : factors.layers) p.composed.push_back(kruskal_reconstruct(l.factors));
  p.uplink_bytes = uplink_reals(factors) * kBytesPerReal;
  p.downlink_bytes = downlink_reals(factors) * kBytesPerReal;
  return p;
}

}  // namespace tdpfed
