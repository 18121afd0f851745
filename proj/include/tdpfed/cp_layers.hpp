#ifndef TDPFED_CP_LAYERS_HPP_
#define TDPFED_CP_LAYERS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tdpfed/tensor.hpp"

namespace tdpfed {

enum class LayerKind : std::uint32_t { linear = 1, conv = 2 };
enum class Activation { none, relu, softmax };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
Activation parse_activation(const std::string& s);

/**
 * One layer of the network.
 *
 * Linear layers have dense shape {out, in}; the weight is out x in.
 * Convolutional layers have dense shape {d, d, in_channels, out_channels}
 * and additionally need the input height and width. Convolutions are
 * stride 1 without padding.
 */
struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  Shape dense_shape;
  std::size_t rank = 1;
  Activation activation = Activation::none;
  std::size_t in_height = 0;
  std::size_t in_width = 0;

  static LayerSpec linear(std::size_t in, std::size_t out, std::size_t rank, Activation act);
  static LayerSpec conv(std::size_t height, std::size_t width, std::size_t in_channels,
                        std::size_t window, std::size_t out_channels, std::size_t rank,
                        Activation act);

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t bias_size() const;
  std::size_t out_height() const { return in_height - dense_shape[0] + 1; }
  std::size_t out_width() const { return in_width - dense_shape[1] + 1; }
  std::size_t fan_in() const;

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;

  /// Throws std::invalid_argument when layers do not compose.
  void validate() const;
  std::size_t input_size() const { return layers.front().input_size(); }
  std::size_t num_classes() const { return layers.back().output_size(); }

  bool operator==(const ModelSpec&) const = default;
};

/// 784-100 (relu) and 100-10 (softmax) fully-connected network.
ModelSpec dnn_spec(std::size_t rank_fc1, std::size_t rank_fc2);

struct DenseLayer {
  DenseTensor weight;
  std::vector<double> bias;
  bool operator==(const DenseLayer&) const = default;
};

/// Full-weight personalized model; one dense weight tensor per layer.
struct PersonalizedModel {
  std::vector<DenseLayer> layers;
  std::size_t parameter_count() const;
  bool operator==(const PersonalizedModel&) const = default;
};

struct TensorizedLayer {
  LayerKind kind = LayerKind::linear;
  KruskalFactors factors;
  std::vector<double> bias;
  bool operator==(const TensorizedLayer&) const = default;
};

/// CP-factorized model; the object exchanged between clients and server.
struct TensorizedModel {
  std::vector<TensorizedLayer> layers;
  /// Reals sent on the uplink: all factor entries plus biases.
  std::size_t parameter_count() const;
  bool operator==(const TensorizedModel&) const = default;
};

/// Throws std::invalid_argument if model does not match spec.
void check_compatible(const ModelSpec& spec, const TensorizedModel& model);
void check_compatible(const ModelSpec& spec, const PersonalizedModel& model);

/// Dense model whose weights are the reconstructions of the factors.
PersonalizedModel compose(const TensorizedModel& model);

// Non-owning views used by the layer forward passes.
struct TensorizedLinear {
  const Matrix& a1;  // I_out x R
  const Matrix& a2;  // I_in x R
  std::span<const double> bias;
};

struct TensorizedConv {
  const Matrix& a1;  // I_d x R, height
  const Matrix& a2;  // I_d x R, width
  const Matrix& a3;  // I_S x R, input channels
  const Matrix& a4;  // I_T x R, output channels
  std::span<const double> bias;
};

/// y = A1 (A2^T x) + b without forming the weight matrix.
std::vector<double> tl_forward(const TensorizedLinear& layer, std::span<const double> x);

/**
 * Staged CP convolution. x is I_P x I_Q x I_S, the result is
 * (I_P - I_d + 1) x (I_Q - I_d + 1) x I_T. Output (i, j) reads input rows
 * i..i+I_d-1 and columns j..j+I_d-1.
 */
DenseTensor tc_forward(const TensorizedConv& layer, const DenseTensor& x);

/// Reference: materializes the kernel and applies the direct convolution.
DenseTensor tc_forward_dense(const TensorizedConv& layer, const DenseTensor& x);

/// Direct valid convolution with a d x d x S x T kernel.
DenseTensor conv_forward_dense(const DenseTensor& kernel, std::span<const double> bias,
                               const DenseTensor& x);

/// Logits for a batch (rows of x are samples).
Matrix model_forward(const ModelSpec& spec, const PersonalizedModel& model, const Matrix& x);
/// Logits for a batch using the factored layer passes.
Matrix model_forward(const ModelSpec& spec, const TensorizedModel& model, const Matrix& x);

/// Argmax per row, ties broken toward the lowest class index.
std::vector<std::size_t> predict(const Matrix& logits);

double compression_rate_linear(std::size_t i_out, std::size_t i_in, std::size_t rank);
double compression_rate_conv(std::size_t i_d, std::size_t i_s, std::size_t i_t, std::size_t rank);

/// Dense parameter count over factored parameter count for one layer.
double compression_rate(const LayerSpec& layer);

/**
 * Rank that brings a layer's compression rate closest to target_cr:
 * the real-valued solution of CR(R) = target rounded to the nearest
 * integer, at least 1.
 */
std::size_t rank_for_target_cr(const LayerSpec& layer, double target_cr);

}  // namespace tdpfed

#endif  // TDPFED_CP_LAYERS_HPP_
