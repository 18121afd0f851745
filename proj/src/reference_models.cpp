#include "tdpfed/reference_models.hpp"

#include <stdexcept>

namespace tdpfed {

namespace {

NamedLayer fc(const std::string& name, std::size_t in, std::size_t out) {
  return {name, std::to_string(in) + "x" + std::to_string(out),
          LayerSpec::linear(in, out, 1, Activation::none)};
}

// Spatial input size only matters for forward passes, not for ranks.
NamedLayer conv(const std::string& name, std::size_t in_ch, std::size_t out_ch) {
  return {name, std::to_string(in_ch) + "x" + std::to_string(out_ch) + "x3x3",
          LayerSpec::conv(32, 32, in_ch, 3, out_ch, 1, Activation::relu)};
}

}  // namespace

std::vector<NamedLayer> reference_layers(const std::string& model) {
  if (model == "dnn") return {fc("fc1", 784, 100), fc("fc2", 100, 10)};
  if (model == "vgg8")
    return {conv("conv1", 3, 32),    conv("conv2", 32, 64),   conv("conv3", 64, 128),
            conv("conv4", 128, 256), conv("conv5", 256, 256), fc("fc1", 256, 256),
            fc("fc2", 256, 256),     fc("fc3", 256, 10)};
  throw std::invalid_argument("unknown model '" + model + "' (expected dnn or vgg8)");
}

std::vector<RankPlanRow> plan_ranks(const std::string& model, double target_cr) {
  std::vector<RankPlanRow> rows;
  for (auto& l : reference_layers(model)) {
    l.spec.rank = rank_for_target_cr(l.spec, target_cr);
    rows.push_back({l.name, l.dims, l.spec.rank, compression_rate(l.spec)});
  }
  return rows;
}

}  // namespace tdpfed
