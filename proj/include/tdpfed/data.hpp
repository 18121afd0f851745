#ifndef TDPFED_DATA_HPP_
#define TDPFED_DATA_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdpfed/errors.hpp"
#include "tdpfed/objective.hpp"
#include "tdpfed/rng.hpp"
#include "tdpfed/tensor.hpp"

namespace tdpfed {

/// Samples as rows of a matrix; labels in [0, num_classes).
struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  Batch gather(std::span<const std::size_t> indices) const;
};

class IdxError : public IoError {
 public:
  enum class Kind { bad_magic, truncated, count_mismatch, unreadable };
  IdxError(Kind kind, std::size_t offset, const std::string& what)
      : IoError(what), kind_(kind), offset_(offset) {}
  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label file pair; pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes an IDX pair (ubyte images count x rows x cols, ubyte labels).
void write_idx(const std::string& images_path, const std::string& labels_path,
               std::size_t rows, std::size_t cols, std::span<const std::uint8_t> pixels,
               std::span<const std::uint8_t> labels);

/// Gaussian blobs, sigma 1, class c centered at separation * e_c.
Dataset synthetic_dataset(std::uint64_t seed, std::size_t classes, std::size_t dim,
                          std::size_t n_per_class, double separation);

struct ClientShard {
  std::vector<std::size_t> classes;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct Partition {
  std::vector<ClientShard> clients;
};

/**
 * Label-shard non-IID split. Each class is shuffled and cut into
 * K * classes_per_client / C equal chunks; slot j of the K * classes_per_client
 * slots takes the next chunk of class perm[j mod C], and client k owns slots
 * k * classes_per_client onward. Test data is split the same way.
 */
Partition partition_noniid(const Dataset& train, const Dataset& test, std::size_t clients,
                           std::size_t classes_per_client, std::uint64_t seed);

struct BatchIndices {
  std::vector<std::size_t> indices;
  bool with_replacement = false;
};

/// Uniform draw without replacement, or with replacement if the shard is
/// smaller than batch_size.
BatchIndices sample_batch(std::span<const std::size_t> shard, std::size_t batch_size, Rng& rng);

struct DataConfig {
  enum class Source { synthetic, idx };
  Source source = Source::synthetic;
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t classes = 10;
  std::size_t dim = 784;
  std::size_t train_per_class = 600;
  std::size_t test_per_class = 100;
  double separation = 3.0;
  std::size_t classes_per_client = 2;

  bool operator==(const DataConfig&) const = default;
};

/// Train and test datasets for an experiment.
std::pair<Dataset, Dataset> load_data(const DataConfig& config, std::uint64_t seed);

}  // namespace tdpfed

#endif  // TDPFED_DATA_HPP_
