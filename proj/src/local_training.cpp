#include "tdpfed/local_training.hpp"

#include <cmath>
#include <stdexcept>

#include "tdpfed/errors.hpp"

namespace tdpfed {

namespace {

OptimizerConfig optimizer_config(OptimizerKind kind, double lr, double momentum) {
  OptimizerConfig c;
  c.kind = kind;
  c.learning_rate = lr;
  c.momentum = momentum;
  return c;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

PersonalizedModel init_personalized(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  PersonalizedModel m;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    Rng rng(derive_seed(seed, "init/theta", l));
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in()));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer{DenseTensor(s.dense_shape), std::vector<double>(s.bias_size())};
    for (auto& v : layer.weight.data()) v = u(rng);
    for (auto& v : layer.bias) v = u(rng);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

ClientState make_client(std::size_t id, const ModelSpec& spec, const ClientShard& shard,
                        const TensorizedModel& initial_factors, std::uint64_t global_seed,
                        const Hyper& hyper) {
  check_compatible(spec, initial_factors);
  ClientState c;
  c.id = id;
  c.train = shard.train;
  c.test = shard.test;
  c.theta = init_personalized(spec, derive_seed(global_seed, "client/theta", id));
  c.factors = initial_factors;
  const auto theta_cfg =
      optimizer_config(hyper.personalized_optimizer, hyper.eta_p, hyper.momentum);
  for (const auto& l : c.theta.layers) {
    c.theta_opt.emplace_back(theta_cfg, l.weight.size());
    c.theta_opt.emplace_back(theta_cfg, l.bias.size());
  }
  const auto factor_cfg = optimizer_config(hyper.factor_optimizer, hyper.eta, hyper.momentum);
  for (const auto& l : c.factors.layers) {
    std::vector<OptimizerState> modes;
    for (const auto& a : l.factors.factors) modes.emplace_back(factor_cfg, a.size());
    c.factor_opt.push_back(std::move(modes));
  }
  c.rng = Rng(derive_seed(global_seed, "client/batches", id));
  return c;
}

PersonalizedStats train_personalized(ClientState& c, const ModelSpec& spec, const Batch& batch,
                                     double lambda, std::size_t s, double eta_p, double nu) {
  if (s == 0) throw std::invalid_argument("train_personalized: s must be >= 1");
  std::vector<DenseTensor> composed;
  for (const auto& l : c.factors.layers) composed.push_back(kruskal_reconstruct(l.factors));
  for (auto& o : c.theta_opt) o.set_learning_rate(eta_p);

  PersonalizedStats stats;
  for (std::size_t step = 0; step < s; ++step) {
    const LossAndGradient lg = personalized_loss_grad(spec, c.theta, composed, batch, lambda);
    if (step == 0) stats.first = lg.loss;
    stats.last = lg.loss;
    stats.grad_norm_sq = squared_norm(lg.grad);
    for (std::size_t l = 0; l < c.theta.layers.size(); ++l) {
      c.theta_opt[2 * l].step(c.theta.layers[l].weight.data(), lg.grad.layers[l].weight.data());
      c.theta_opt[2 * l + 1].step(c.theta.layers[l].bias, lg.grad.layers[l].bias);
    }
  }
  stats.stationary = stats.grad_norm_sq <= nu;
  return stats;
}

void train_factors(ClientState& c, const PersonalizedModel& theta_tilde, double lambda,
                   std::size_t s_prime, double eta) {
  if (s_prime == 0) throw std::invalid_argument("train_factors: s_prime must be >= 1");
  if (theta_tilde.layers.size() != c.factors.layers.size())
    throw std::invalid_argument("train_factors: layer count mismatch");
  std::vector<std::vector<Matrix>> unfolded(c.factors.layers.size());
  for (std::size_t l = 0; l < c.factors.layers.size(); ++l) {
    const auto& w = theta_tilde.layers[l].weight;
    if (w.shape() != c.factors.layers[l].factors.target_shape())
      throw std::invalid_argument("train_factors: layer " + std::to_string(l) + " shape mismatch");
    for (std::size_t n = 0; n < w.order(); ++n) unfolded[l].push_back(unfold(w, n));
  }
  for (auto& layer_opt : c.factor_opt)
    for (auto& o : layer_opt) o.set_learning_rate(eta);

  for (std::size_t sweep = 0; sweep < s_prime; ++sweep)
    for (std::size_t l = 0; l < c.factors.layers.size(); ++l) {
      auto& f = c.factors.layers[l].factors;
      for (std::size_t n = 0; n < f.order(); ++n) {
        const Matrix g = factor_gradient_unfolded(unfolded[l][n], f, n, lambda);
        c.factor_opt[l][n].step(f.factors[n].data(), g.data());
      }
    }
}

double prox_gap(const PersonalizedModel& theta, const TensorizedModel& factors) {
  double s = 0.0;
  for (std::size_t l = 0; l < factors.layers.size(); ++l)
    s += 2.0 * layer_prox(theta.layers[l].weight, factors.layers[l].factors, 1.0);
  return std::sqrt(s);
}

ClientUpdateResult client_update(ClientState& c, const ModelSpec& spec, const Dataset& train,
                                 const TensorizedModel& broadcast, const Hyper& hyper,
                                 std::size_t round) {
  check_compatible(spec, broadcast);
  c.factors = broadcast;
  for (auto& layer_opt : c.factor_opt)
    for (auto& o : layer_opt) o.reset();

  ClientUpdateResult result;
  double loss_sum = 0.0;
  for (std::size_t local = 0; local < hyper.tau; ++local) {
    const BatchIndices drawn = sample_batch(c.train, hyper.batch_size, c.rng);
    result.sampled_with_replacement |= drawn.with_replacement;
    const Batch batch = train.gather(drawn.indices);

    const PersonalizedStats stats =
        train_personalized(c, spec, batch, hyper.lambda, hyper.s, hyper.eta_p, hyper.nu);
    if (!std::isfinite(stats.last.total)) throw NumericError(round, c.id, 0, "loss");
    loss_sum += stats.last.total;

    train_factors(c, c.theta, hyper.lambda, hyper.s_prime, hyper.eta);
    for (std::size_t l = 0; l < c.factors.layers.size(); ++l) {
      for (const auto& a : c.factors.layers[l].factors.factors)
        if (!all_finite(a.data())) throw NumericError(round, c.id, l, "factor");
      if (!all_finite(c.theta.layers[l].weight.data()) || !all_finite(c.theta.layers[l].bias))
        throw NumericError(round, c.id, l, "personalized weight");
    }
    for (std::size_t l = 0; l < c.factors.layers.size(); ++l)
      c.factors.layers[l].bias = c.theta.layers[l].bias;
  }
  if (hyper.tau > 0) result.mean_loss = loss_sum / static_cast<double>(hyper.tau);
  result.prox_gap = prox_gap(c.theta, c.factors);
  result.factors = c.factors;
  return result;
}

}  // namespace tdpfed
