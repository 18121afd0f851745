#include "tdpfed/objective.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tdpfed {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Matrix& m) { return MapC(m.data().data(), m.rows(), m.cols()); }
Map view(Matrix& m) { return Map(m.data().data(), m.rows(), m.cols()); }

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  if (batch.features.rows() != batch.size())
    throw std::invalid_argument("batch features and labels differ in length");
  if (batch.features.cols() != spec.input_size())
    throw std::invalid_argument("batch feature width " + std::to_string(batch.features.cols()) +
                                " != model input " + std::to_string(spec.input_size()));
  for (auto y : batch.labels)
    if (y >= spec.num_classes())
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
}

/// Per-layer inputs and pre-activations of a dense forward pass.
struct ForwardTrace {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  Matrix output;
};

ForwardTrace forward_trace(const ModelSpec& spec, const PersonalizedModel& theta, const Matrix& x) {
  ForwardTrace tr;
  Matrix h = x;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    const auto& layer = theta.layers[l];
    Matrix z(h.rows(), s.output_size());
    if (s.kind == LayerKind::linear) {
      MapC w(layer.weight.data().data(), s.dense_shape[0], s.dense_shape[1]);
      view(z).noalias() = view(h) * w.transpose();
      for (std::size_t i = 0; i < z.rows(); ++i) {
        auto row = z.row(i);
        for (std::size_t o = 0; o < row.size(); ++o) row[o] += layer.bias[o];
      }
    } else {
      for (std::size_t i = 0; i < h.rows(); ++i) {
        auto in = h.row(i);
        DenseTensor img({s.in_height, s.in_width, s.dense_shape[2]},
                        std::vector<double>(in.begin(), in.end()));
        const DenseTensor out = conv_forward_dense(layer.weight, layer.bias, img);
        std::copy(out.data().begin(), out.data().end(), z.row(i).begin());
      }
    }
    Matrix a = z;
    if (s.activation == Activation::relu)
      for (auto& v : a.data()) v = v > 0.0 ? v : 0.0;
    tr.inputs.push_back(std::move(h));
    tr.pre.push_back(std::move(z));
    h = std::move(a);
  }
  tr.output = std::move(h);
  return tr;
}

/// Mean cross-entropy and, optionally, its gradient w.r.t. the logits.
double softmax_cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels,
                             Matrix* dlogits) {
  const std::size_t n = logits.rows();
  double loss = 0.0;
  if (dlogits) *dlogits = Matrix(n, logits.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[labels[i]];
    if (dlogits) {
      auto g = dlogits->row(i);
      for (std::size_t c = 0; c < row.size(); ++c)
        g[c] = std::exp(row[c] - lse) / static_cast<double>(n);
      g[labels[i]] -= 1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

PersonalizedModel zeros_like(const PersonalizedModel& m) {
  PersonalizedModel z;
  for (const auto& l : m.layers)
    z.layers.push_back({DenseTensor(l.weight.shape()), std::vector<double>(l.bias.size(), 0.0)});
  return z;
}

std::vector<DenseTensor> compose_weights(const TensorizedModel& factors) {
  std::vector<DenseTensor> out;
  out.reserve(factors.layers.size());
  for (const auto& l : factors.layers) out.push_back(kruskal_reconstruct(l.factors));
  return out;
}

}  // namespace

double data_loss(const ModelSpec& spec, const PersonalizedModel& theta, const Batch& batch) {
  check_batch(spec, batch);
  return softmax_cross_entropy(model_forward(spec, theta, batch.features), batch.labels, nullptr);
}

double prox_term(const PersonalizedModel& theta, std::span<const DenseTensor> composed,
                 double lambda) {
  if (composed.size() != theta.layers.size())
    throw std::invalid_argument("prox_term: layer count mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < composed.size(); ++l) {
    const auto& w = theta.layers[l].weight;
    if (w.shape() != composed[l].shape())
      throw std::invalid_argument("prox_term: layer " + std::to_string(l) + " shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w.data()[i] - composed[l].data()[i];
      s += d * d;
    }
  }
  return 0.5 * lambda * s;
}

RegularizedLoss personalized_loss(const ModelSpec& spec, const PersonalizedModel& theta,
                                  const TensorizedModel& factors, const Batch& batch,
                                  double lambda) {
  check_lambda(lambda);
  check_compatible(spec, factors);
  RegularizedLoss r;
  r.data_loss = data_loss(spec, theta, batch);
  const auto composed = compose_weights(factors);
  r.prox_term = prox_term(theta, composed, lambda);
  r.total = r.data_loss + r.prox_term;
  return r;
}

LossAndGradient personalized_loss_grad(const ModelSpec& spec, const PersonalizedModel& theta,
                                       std::span<const DenseTensor> composed, const Batch& batch,
                                       double lambda) {
  check_lambda(lambda);
  check_compatible(spec, theta);
  check_batch(spec, batch);

  LossAndGradient out;
  out.grad = zeros_like(theta);
  ForwardTrace tr = forward_trace(spec, theta, batch.features);
  Matrix delta;  // gradient w.r.t. the current layer's output (post-activation)
  out.loss.data_loss = softmax_cross_entropy(tr.output, batch.labels, &delta);

  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const auto& s = spec.layers[l];
    const auto& layer = theta.layers[l];
    auto& g = out.grad.layers[l];
    if (s.activation == Activation::relu) {
      const auto& z = tr.pre[l].data();
      for (std::size_t i = 0; i < z.size(); ++i)
        if (!(z[i] > 0.0)) delta.data()[i] = 0.0;
    }
    const Matrix& in = tr.inputs[l];
    Matrix din(in.rows(), in.cols());
    if (s.kind == LayerKind::linear) {
      Map gw(g.weight.data().data(), s.dense_shape[0], s.dense_shape[1]);
      gw.noalias() = view(delta).transpose() * view(in);
      for (std::size_t i = 0; i < delta.rows(); ++i) {
        auto row = delta.row(i);
        for (std::size_t o = 0; o < row.size(); ++o) g.bias[o] += row[o];
      }
      if (l > 0) {
        MapC w(layer.weight.data().data(), s.dense_shape[0], s.dense_shape[1]);
        view(din).noalias() = view(delta) * w;
      }
    } else {
      const std::size_t d = s.dense_shape[0], in_s = s.dense_shape[2], out_t = s.dense_shape[3];
      const std::size_t in_q = s.in_width, out_p = s.out_height(), out_q = s.out_width();
      const auto& w = layer.weight.data();
      auto& gw = g.weight.data();
      for (std::size_t n = 0; n < in.rows(); ++n) {
        auto x = in.row(n);
        auto dy = delta.row(n);
        auto dx = din.row(n);
        for (std::size_t i = 0; i < out_p; ++i)
          for (std::size_t j = 0; j < out_q; ++j) {
            const double* dyp = &dy[(i * out_q + j) * out_t];
            for (std::size_t t = 0; t < out_t; ++t) g.bias[t] += dyp[t];
            for (std::size_t a = 0; a < d; ++a)
              for (std::size_t b = 0; b < d; ++b)
                for (std::size_t c = 0; c < in_s; ++c) {
                  const std::size_t xi = ((i + a) * in_q + (j + b)) * in_s + c;
                  const std::size_t wi = ((a * d + b) * in_s + c) * out_t;
                  double acc = 0.0;
                  for (std::size_t t = 0; t < out_t; ++t) {
                    gw[wi + t] += dyp[t] * x[xi];
                    acc += w[wi + t] * dyp[t];
                  }
                  dx[xi] += acc;
                }
          }
      }
    }
    delta = std::move(din);
  }

  out.loss.prox_term = prox_term(theta, composed, lambda);
  out.loss.total = out.loss.data_loss + out.loss.prox_term;
  for (std::size_t l = 0; l < composed.size(); ++l) {
    auto& gw = out.grad.layers[l].weight.data();
    const auto& w = theta.layers[l].weight.data();
    const auto& c = composed[l].data();
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += lambda * (w[i] - c[i]);
  }
  return out;
}

PersonalizedModel personalized_grad(const ModelSpec& spec, const PersonalizedModel& theta,
                                    const TensorizedModel& factors, const Batch& batch,
                                    double lambda) {
  check_compatible(spec, factors);
  const auto composed = compose_weights(factors);
  return personalized_loss_grad(spec, theta, composed, batch, lambda).grad;
}

double squared_norm(const PersonalizedModel& m) {
  double s = 0.0;
  for (const auto& l : m.layers) {
    for (double v : l.weight.data()) s += v * v;
    for (double v : l.bias) s += v * v;
  }
  return s;
}

bool grad_check_criterion(const ModelSpec& spec, const PersonalizedModel& theta,
                          const TensorizedModel& factors, const Batch& batch, double lambda,
                          double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
  return squared_norm(personalized_grad(spec, theta, factors, batch, lambda)) <= nu;
}

Matrix factor_gradient_unfolded(const Matrix& theta_unfolded, const KruskalFactors& factors,
                                std::size_t mode, double lambda) {
  factors.validate();
  if (mode >= factors.order())
    throw std::out_of_range("factor_gradient: mode " + std::to_string(mode) + " out of range");
  const Matrix& a = factors.factors[mode];
  const Matrix h = khatri_rao_except(factors, mode);
  if (theta_unfolded.rows() != a.rows() || theta_unfolded.cols() != h.rows())
    throw std::invalid_argument("factor_gradient: theta does not match factor shapes");
  const Matrix v = gram_hadamard_except(factors, mode);
  Matrix g(a.rows(), a.cols());
  view(g).noalias() = lambda * (view(a) * view(v) - view(theta_unfolded) * view(h));
  return g;
}

Matrix factor_gradient(const DenseTensor& theta_layer, const KruskalFactors& factors,
                       std::size_t mode, double lambda) {
  if (theta_layer.shape() != factors.target_shape())
    throw std::invalid_argument("factor_gradient: theta shape does not match factors");
  if (mode >= factors.order())
    throw std::out_of_range("factor_gradient: mode " + std::to_string(mode) + " out of range");
  return factor_gradient_unfolded(unfold(theta_layer, mode), factors, mode, lambda);
}

double layer_prox(const DenseTensor& theta_layer, const KruskalFactors& factors, double lambda) {
  const DenseTensor rec = kruskal_reconstruct(factors);
  if (rec.shape() != theta_layer.shape())
    throw std::invalid_argument("layer_prox: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double d = theta_layer.data()[i] - rec.data()[i];
    s += d * d;
  }
  return 0.5 * lambda * s;
}

double local_objective_at_theta(const PersonalizedModel& theta_tilde,
                                const TensorizedModel& factors, double lambda,
                                double data_loss_at_theta) {
  check_lambda(lambda);
  if (theta_tilde.layers.size() != factors.layers.size())
    throw std::invalid_argument("local_objective_at_theta: layer count mismatch");
  double s = data_loss_at_theta;
  for (std::size_t l = 0; l < factors.layers.size(); ++l)
    s += layer_prox(theta_tilde.layers[l].weight, factors.layers[l].factors, lambda);
  return s;
}

}  // namespace tdpfed
