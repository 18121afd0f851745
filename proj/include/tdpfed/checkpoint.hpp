#ifndef TDPFED_CHECKPOINT_HPP_
#define TDPFED_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tdpfed/cp_layers.hpp"

namespace tdpfed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/**
 * Binary checkpoint of a TensorizedModel, all integers u32 little-endian,
 * all reals f64 little-endian:
 *
 *   "TDPF" version layer_count
 *   per layer: kind(1 linear, 2 conv) mode_count extents[mode_count] rank
 *              factor matrices in mode order, each I_n x R row-major
 *              bias (extents[0] reals for linear, extents[3] for conv)
 */
std::vector<std::uint8_t> encode_checkpoint(const TensorizedModel& model);
/// Throws IoError on bad magic, version mismatch or truncation.
TensorizedModel decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const TensorizedModel& model);
TensorizedModel read_checkpoint(const std::string& path);

}  // namespace tdpfed

#endif  // TDPFED_CHECKPOINT_HPP_
