#include "tdpfed/cp_layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tdpfed {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

std::string layer_name(std::size_t l) { return "layer " + std::to_string(l); }

void apply_activation(Activation act, Matrix& y) {
  if (act != Activation::relu) return;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
}

}  // namespace

std::string to_string(LayerKind kind) { return kind == LayerKind::linear ? "linear" : "conv"; }

std::string to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "none";
}

Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Specs

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, std::size_t rank, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::linear;
  l.dense_shape = {out, in};
  l.rank = rank;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::conv(std::size_t height, std::size_t width, std::size_t in_channels,
                          std::size_t window, std::size_t out_channels, std::size_t rank,
                          Activation act) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.dense_shape = {window, window, in_channels, out_channels};
  l.rank = rank;
  l.activation = act;
  l.in_height = height;
  l.in_width = width;
  return l;
}

std::size_t LayerSpec::input_size() const {
  if (kind == LayerKind::linear) return dense_shape[1];
  return in_height * in_width * dense_shape[2];
}

std::size_t LayerSpec::output_size() const {
  if (kind == LayerKind::linear) return dense_shape[0];
  return out_height() * out_width() * dense_shape[3];
}

std::size_t LayerSpec::bias_size() const {
  return kind == LayerKind::linear ? dense_shape[0] : dense_shape[3];
}

std::size_t LayerSpec::fan_in() const {
  if (kind == LayerKind::linear) return dense_shape[1];
  return dense_shape[0] * dense_shape[1] * dense_shape[2];
}

void ModelSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    if (s.rank == 0) throw std::invalid_argument(layer_name(l) + ": rank must be >= 1");
    if (s.kind == LayerKind::linear) {
      if (s.dense_shape.size() != 2 || s.dense_shape[0] == 0 || s.dense_shape[1] == 0)
        throw std::invalid_argument(layer_name(l) + ": linear layer needs positive {out, in}");
    } else {
      if (s.dense_shape.size() != 4 || std::count(s.dense_shape.begin(), s.dense_shape.end(), 0))
        throw std::invalid_argument(layer_name(l) + ": conv layer needs positive {d, d, S, T}");
      if (s.dense_shape[0] != s.dense_shape[1])
        throw std::invalid_argument(layer_name(l) + ": conv window must be square");
      if (s.dense_shape[0] % 2 == 0)
        throw std::invalid_argument(layer_name(l) + ": conv window must be odd");
      if (s.in_height < s.dense_shape[0] || s.in_width < s.dense_shape[0])
        throw std::invalid_argument(layer_name(l) + ": input smaller than window");
    }
    if (s.activation == Activation::softmax && l + 1 != layers.size())
      throw std::invalid_argument(layer_name(l) + ": softmax is only allowed on the last layer");
    if (l > 0 && layers[l - 1].output_size() != s.input_size())
      throw std::invalid_argument(layer_name(l) + ": input size " +
                                  std::to_string(s.input_size()) + " != previous output size " +
                                  std::to_string(layers[l - 1].output_size()));
  }
}

ModelSpec dnn_spec(std::size_t rank_fc1, std::size_t rank_fc2) {
  ModelSpec spec;
  spec.layers.push_back(LayerSpec::linear(784, 100, rank_fc1, Activation::relu));
  spec.layers.push_back(LayerSpec::linear(100, 10, rank_fc2, Activation::softmax));
  return spec;
}

// ---------------------------------------------------------------------------
// Models

std::size_t PersonalizedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::size_t TensorizedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.factors.parameter_count() + l.bias.size();
  return n;
}

void check_compatible(const ModelSpec& spec, const TensorizedModel& model) {
  if (spec.layers.size() != model.layers.size())
    throw std::invalid_argument("tensorized model has " + std::to_string(model.layers.size()) +
                                " layers, spec has " + std::to_string(spec.layers.size()));
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    const auto& m = model.layers[l];
    if (m.kind != s.kind) throw std::invalid_argument(layer_name(l) + ": layer kind mismatch");
    m.factors.validate();
    if (m.factors.target_shape() != s.dense_shape)
      throw std::invalid_argument(layer_name(l) + ": factor extents do not match spec");
    if (m.factors.rank() != s.rank)
      throw std::invalid_argument(layer_name(l) + ": rank " + std::to_string(m.factors.rank()) +
                                  " != spec rank " + std::to_string(s.rank));
    if (m.bias.size() != s.bias_size())
      throw std::invalid_argument(layer_name(l) + ": bias length mismatch");
  }
}

void check_compatible(const ModelSpec& spec, const PersonalizedModel& model) {
  if (spec.layers.size() != model.layers.size())
    throw std::invalid_argument("personalized model layer count does not match spec");
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (model.layers[l].weight.shape() != spec.layers[l].dense_shape)
      throw std::invalid_argument(layer_name(l) + ": weight shape does not match spec");
    if (model.layers[l].bias.size() != spec.layers[l].bias_size())
      throw std::invalid_argument(layer_name(l) + ": bias length mismatch");
  }
}

PersonalizedModel compose(const TensorizedModel& model) {
  PersonalizedModel out;
  out.layers.reserve(model.layers.size());
  for (const auto& l : model.layers)
    out.layers.push_back({kruskal_reconstruct(l.factors), l.bias});
  return out;
}

// ---------------------------------------------------------------------------
// Layer forwards

std::vector<double> tl_forward(const TensorizedLinear& layer, std::span<const double> x) {
  const std::size_t rank = layer.a1.cols();
  if (layer.a2.cols() != rank) throw std::invalid_argument("tl_forward: factor ranks differ");
  if (x.size() != layer.a2.rows())
    throw std::invalid_argument("tl_forward: input length " + std::to_string(x.size()) +
                                " != " + std::to_string(layer.a2.rows()));
  if (!layer.bias.empty() && layer.bias.size() != layer.a1.rows())
    throw std::invalid_argument("tl_forward: bias length mismatch");
  std::vector<double> z(rank, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto row = layer.a2.row(i);
    for (std::size_t r = 0; r < rank; ++r) z[r] += row[r] * x[i];
  }
  std::vector<double> y(layer.a1.rows(), 0.0);
  for (std::size_t o = 0; o < y.size(); ++o) {
    auto row = layer.a1.row(o);
    double s = layer.bias.empty() ? 0.0 : layer.bias[o];
    for (std::size_t r = 0; r < rank; ++r) s += row[r] * z[r];
    y[o] = s;
  }
  return y;
}

namespace {

void check_conv_input(const Matrix& a1, const Matrix& a2, const Matrix& a3, const Matrix& a4,
                      std::span<const double> bias, const DenseTensor& x) {
  const std::size_t r = a1.cols();
  if (a2.cols() != r || a3.cols() != r || a4.cols() != r)
    throw std::invalid_argument("conv: factor ranks differ");
  if (a1.rows() != a2.rows()) throw std::invalid_argument("conv: window must be square");
  if (x.order() != 3) throw std::invalid_argument("conv: input must be height x width x channels");
  if (x.extent(2) != a3.rows())
    throw std::invalid_argument("conv: input has " + std::to_string(x.extent(2)) +
                                " channels, layer expects " + std::to_string(a3.rows()));
  if (x.extent(0) < a1.rows() || x.extent(1) < a1.rows())
    throw std::invalid_argument("conv: input smaller than window");
  if (!bias.empty() && bias.size() != a4.rows())
    throw std::invalid_argument("conv: bias length mismatch");
}

}  // namespace

DenseTensor tc_forward(const TensorizedConv& layer, const DenseTensor& x) {
  check_conv_input(layer.a1, layer.a2, layer.a3, layer.a4, layer.bias, x);
  const std::size_t d = layer.a1.rows();
  const std::size_t rank = layer.a1.cols();
  const std::size_t in_p = x.extent(0), in_q = x.extent(1), in_s = x.extent(2);
  const std::size_t out_p = in_p - d + 1, out_q = in_q - d + 1;
  const std::size_t out_t = layer.a4.rows();
  const auto& xd = x.data();

  // Channel mix: ys[p, q, r] = sum_s a3[s, r] x[p, q, s].
  DenseTensor ys({in_p, in_q, rank});
  for (std::size_t p = 0; p < in_p; ++p)
    for (std::size_t q = 0; q < in_q; ++q) {
      const double* px = &xd[(p * in_q + q) * in_s];
      double* py = &ys.data()[(p * in_q + q) * rank];
      for (std::size_t s = 0; s < in_s; ++s) {
        auto a = layer.a3.row(s);
        for (std::size_t r = 0; r < rank; ++r) py[r] += a[r] * px[s];
      }
    }

  // Width: ysj[p, j, r] = sum_b a2[b, r] ys[p, j + b, r].
  DenseTensor ysj({in_p, out_q, rank});
  for (std::size_t p = 0; p < in_p; ++p)
    for (std::size_t j = 0; j < out_q; ++j) {
      double* dst = &ysj.data()[(p * out_q + j) * rank];
      for (std::size_t b = 0; b < d; ++b) {
        auto a = layer.a2.row(b);
        const double* src = &ys.data()[(p * in_q + j + b) * rank];
        for (std::size_t r = 0; r < rank; ++r) dst[r] += a[r] * src[r];
      }
    }

  // Height: ysji[i, j, r] = sum_a a1[a, r] ysj[i + a, j, r].
  DenseTensor ysji({out_p, out_q, rank});
  for (std::size_t i = 0; i < out_p; ++i)
    for (std::size_t j = 0; j < out_q; ++j) {
      double* dst = &ysji.data()[(i * out_q + j) * rank];
      for (std::size_t a = 0; a < d; ++a) {
        auto f = layer.a1.row(a);
        const double* src = &ysj.data()[((i + a) * out_q + j) * rank];
        for (std::size_t r = 0; r < rank; ++r) dst[r] += f[r] * src[r];
      }
    }

  // Output mix: y[i, j, t] = sum_r a4[t, r] ysji[i, j, r] + b[t].
  DenseTensor y({out_p, out_q, out_t});
  for (std::size_t ij = 0; ij < out_p * out_q; ++ij) {
    const double* src = &ysji.data()[ij * rank];
    double* dst = &y.data()[ij * out_t];
    for (std::size_t t = 0; t < out_t; ++t) {
      auto f = layer.a4.row(t);
      double s = layer.bias.empty() ? 0.0 : layer.bias[t];
      for (std::size_t r = 0; r < rank; ++r) s += f[r] * src[r];
      dst[t] = s;
    }
  }
  return y;
}

DenseTensor conv_forward_dense(const DenseTensor& kernel, std::span<const double> bias,
                               const DenseTensor& x) {
  if (kernel.order() != 4) throw std::invalid_argument("conv kernel must have four modes");
  const std::size_t d = kernel.extent(0);
  const std::size_t in_s = kernel.extent(2), out_t = kernel.extent(3);
  if (kernel.extent(1) != d) throw std::invalid_argument("conv: window must be square");
  if (x.order() != 3 || x.extent(2) != in_s)
    throw std::invalid_argument("conv: input channel mismatch");
  if (x.extent(0) < d || x.extent(1) < d)
    throw std::invalid_argument("conv: input smaller than window");
  if (!bias.empty() && bias.size() != out_t)
    throw std::invalid_argument("conv: bias length mismatch");
  const std::size_t in_q = x.extent(1);
  const std::size_t out_p = x.extent(0) - d + 1, out_q = in_q - d + 1;
  const auto& w = kernel.data();
  const auto& xd = x.data();
  DenseTensor y({out_p, out_q, out_t});
  for (std::size_t i = 0; i < out_p; ++i)
    for (std::size_t j = 0; j < out_q; ++j) {
      double* dst = &y.data()[(i * out_q + j) * out_t];
      for (std::size_t t = 0; t < out_t; ++t) dst[t] = bias.empty() ? 0.0 : bias[t];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          for (std::size_t s = 0; s < in_s; ++s) {
            const double xv = xd[((i + a) * in_q + (j + b)) * in_s + s];
            const double* wk = &w[((a * d + b) * in_s + s) * out_t];
            for (std::size_t t = 0; t < out_t; ++t) dst[t] += wk[t] * xv;
          }
    }
  return y;
}

DenseTensor tc_forward_dense(const TensorizedConv& layer, const DenseTensor& x) {
  check_conv_input(layer.a1, layer.a2, layer.a3, layer.a4, layer.bias, x);
  const DenseTensor kernel =
      kruskal_reconstruct(KruskalFactors({layer.a1, layer.a2, layer.a3, layer.a4}));
  return conv_forward_dense(kernel, layer.bias, x);
}

// ---------------------------------------------------------------------------
// Model forwards

namespace {

DenseTensor sample_as_image(const LayerSpec& s, std::span<const double> row) {
  return DenseTensor({s.in_height, s.in_width, s.dense_shape[2]},
                     std::vector<double>(row.begin(), row.end()));
}

}  // namespace

Matrix model_forward(const ModelSpec& spec, const PersonalizedModel& model, const Matrix& x) {
  check_compatible(spec, model);
  if (x.cols() != spec.input_size())
    throw std::invalid_argument("model_forward: input width " + std::to_string(x.cols()) +
                                " != " + std::to_string(spec.input_size()));
  Matrix h = x;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    const auto& layer = model.layers[l];
    Matrix y(h.rows(), s.output_size());
    if (s.kind == LayerKind::linear) {
      MapC w(layer.weight.data().data(), s.dense_shape[0], s.dense_shape[1]);
      Map(y.data().data(), y.rows(), y.cols()).noalias() =
          MapC(h.data().data(), h.rows(), h.cols()) * w.transpose();
      for (std::size_t i = 0; i < y.rows(); ++i) {
        auto row = y.row(i);
        for (std::size_t o = 0; o < row.size(); ++o) row[o] += layer.bias[o];
      }
    } else {
      for (std::size_t i = 0; i < h.rows(); ++i) {
        const DenseTensor out = conv_forward_dense(layer.weight, layer.bias, sample_as_image(s, h.row(i)));
        std::copy(out.data().begin(), out.data().end(), y.row(i).begin());
      }
    }
    apply_activation(s.activation, y);
    h = std::move(y);
  }
  return h;
}

Matrix model_forward(const ModelSpec& spec, const TensorizedModel& model, const Matrix& x) {
  check_compatible(spec, model);
  if (x.cols() != spec.input_size())
    throw std::invalid_argument("model_forward: input width mismatch");
  Matrix h = x;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& s = spec.layers[l];
    const auto& layer = model.layers[l];
    const auto& f = layer.factors.factors;
    Matrix y(h.rows(), s.output_size());
    if (s.kind == LayerKind::linear) {
      // (X A2) A1^T + b
      y = matmul_nt(matmul(h, f[1]), f[0]);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        auto row = y.row(i);
        for (std::size_t o = 0; o < row.size(); ++o) row[o] += layer.bias[o];
      }
    } else {
      const TensorizedConv view{f[0], f[1], f[2], f[3], layer.bias};
      for (std::size_t i = 0; i < h.rows(); ++i) {
        const DenseTensor out = tc_forward(view, sample_as_image(s, h.row(i)));
        std::copy(out.data().begin(), out.data().end(), y.row(i).begin());
      }
    }
    apply_activation(s.activation, y);
    h = std::move(y);
  }
  return h;
}

std::vector<std::size_t> predict(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compression rate

double compression_rate_linear(std::size_t i_out, std::size_t i_in, std::size_t rank) {
  return static_cast<double>(i_out * i_in) / static_cast<double>(rank * (i_out + i_in));
}

double compression_rate_conv(std::size_t i_d, std::size_t i_s, std::size_t i_t, std::size_t rank) {
  return static_cast<double>(i_d * i_d * i_s * i_t) /
         static_cast<double>(rank * (2 * i_d + i_s + i_t));
}

double compression_rate(const LayerSpec& layer) {
  const auto& d = layer.dense_shape;
  if (layer.kind == LayerKind::linear) return compression_rate_linear(d[0], d[1], layer.rank);
  return compression_rate_conv(d[0], d[2], d[3], layer.rank);
}

std::size_t rank_for_target_cr(const LayerSpec& layer, double target_cr) {
  if (!(target_cr > 0.0)) throw std::invalid_argument("target compression rate must be positive");
  const double dense = static_cast<double>(shape_size(layer.dense_shape));
  double per_rank = 0.0;
  for (auto e : layer.dense_shape) per_rank += static_cast<double>(e);
  const double exact = dense / (target_cr * per_rank);
  return static_cast<std::size_t>(std::max(1.0, std::round(exact)));
}

}  // namespace tdpfed
