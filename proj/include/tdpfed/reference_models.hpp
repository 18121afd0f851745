#ifndef TDPFED_REFERENCE_MODELS_HPP_
#define TDPFED_REFERENCE_MODELS_HPP_

#include <string>
#include <vector>

#include "tdpfed/cp_layers.hpp"

namespace tdpfed {

struct NamedLayer {
  std::string name;
  std::string dims;  // as printed in rank tables
  LayerSpec spec;
};

/// Layer shapes of the reference networks "dnn" and "vgg8"; ranks unset.
/// Throws std::invalid_argument for other names.
std::vector<NamedLayer> reference_layers(const std::string& model);

struct RankPlanRow {
  std::string layer;
  std::string dims;
  std::size_t rank = 0;
  double achieved_cr = 0.0;
};

std::vector<RankPlanRow> plan_ranks(const std::string& model, double target_cr);

}  // namespace tdpfed

#endif  // TDPFED_REFERENCE_MODELS_HPP_
