#include "tdpfed/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tdpfed/objective.hpp"
#include "tdpfed/rng.hpp"

namespace tdpfed {

double gradient_rel_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

namespace {

void record(GradCheckCase& c, const std::string& coord, double analytic, double numeric,
            double tolerance) {
  const double err = gradient_rel_error(analytic, numeric);
  ++c.coordinates;
  c.max_rel_error = std::max(c.max_rel_error, err);
  if (!(err < tolerance)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s analytic=%.10g numeric=%.10g rel=%.3g", coord.c_str(),
                  analytic, numeric, err);
    c.offending.emplace_back(buf);
  }
}

}  // namespace

GradCheckCase check_factor_gradient(std::size_t modes, std::size_t rank,
                                    const GradCheckOptions& options) {
  GradCheckCase result;
  result.name = "factor N=" + std::to_string(modes) + " R=" + std::to_string(rank);
  Rng rng(derive_seed(options.seed, "gradcheck/factor", modes, rank));
  std::uniform_int_distribution<std::size_t> extent(2, 4);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double lambda = 1.5;

  std::vector<Matrix> factors;
  Shape shape;
  for (std::size_t n = 0; n < modes; ++n) {
    shape.push_back(extent(rng));
    Matrix a(shape.back(), rank);
    for (auto& v : a.data()) v = unit(rng);
    factors.push_back(std::move(a));
  }
  KruskalFactors f(std::move(factors));
  DenseTensor theta(shape);
  for (auto& v : theta.data()) v = unit(rng);

  const double h = options.step;
  for (std::size_t n = 0; n < modes; ++n) {
    Matrix g = factor_gradient(theta, f, n, lambda);
    if (options.flip_theta_sign) {
      // -theta H + A V  ->  +theta H + A V, i.e. g + 2 lambda theta_(n) H_n
      const Matrix th = matmul(unfold(theta, n), khatri_rao_except(f, n));
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += 2.0 * lambda * th.data()[i];
    }
    for (std::size_t i = 0; i < f.factors[n].rows(); ++i)
      for (std::size_t r = 0; r < rank; ++r) {
        double& entry = f.factors[n](i, r);
        const double saved = entry;
        entry = saved + h;
        const double up = layer_prox(theta, f, lambda);
        entry = saved - h;
        const double down = layer_prox(theta, f, lambda);
        entry = saved;
        record(result,
               "A(" + std::to_string(n) + ")[" + std::to_string(i) + "," + std::to_string(r) + "]",
               g(i, r), (up - down) / (2.0 * h), options.tolerance);
      }
  }
  return result;
}

GradCheckCase check_backprop(const GradCheckOptions& options) {
  GradCheckCase result;
  result.name = "backprop conv+linear";
  Rng rng(derive_seed(options.seed, "gradcheck/backprop"));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  ModelSpec spec;
  spec.layers.push_back(LayerSpec::conv(4, 4, 1, 3, 2, 2, Activation::relu));
  spec.layers.push_back(LayerSpec::linear(8, 3, 2, Activation::softmax));
  spec.validate();

  PersonalizedModel theta;
  std::vector<DenseTensor> composed;
  for (const auto& s : spec.layers) {
    DenseLayer l{DenseTensor(s.dense_shape), std::vector<double>(s.bias_size())};
    for (auto& v : l.weight.data()) v = unit(rng);
    for (auto& v : l.bias) v = unit(rng);
    theta.layers.push_back(std::move(l));
    DenseTensor c(s.dense_shape);
    for (auto& v : c.data()) v = unit(rng);
    composed.push_back(std::move(c));
  }
  Batch batch;
  batch.features = Matrix(3, spec.input_size());
  for (auto& v : batch.features.data()) v = unit(rng);
  batch.labels = {0, 2, 1};
  const double lambda = 0.7;

  const LossAndGradient lg = personalized_loss_grad(spec, theta, composed, batch, lambda);
  auto objective = [&] {
    return data_loss(spec, theta, batch) + prox_term(theta, composed, lambda);
  };
  const double h = options.step;
  auto probe = [&](double& entry, double analytic, const std::string& coord) {
    const double saved = entry;
    entry = saved + h;
    const double up = objective();
    entry = saved - h;
    const double down = objective();
    entry = saved;
    record(result, coord, analytic, (up - down) / (2.0 * h), options.tolerance);
  };
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    auto& w = theta.layers[l].weight.data();
    for (std::size_t i = 0; i < w.size(); ++i)
      probe(w[i], lg.grad.layers[l].weight.data()[i],
            "W" + std::to_string(l) + "[" + std::to_string(i) + "]");
    auto& b = theta.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i)
      probe(b[i], lg.grad.layers[l].bias[i], "b" + std::to_string(l) + "[" + std::to_string(i) + "]");
  }
  return result;
}

}  // namespace tdpfed
