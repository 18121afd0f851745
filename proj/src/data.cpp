#include "tdpfed/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace tdpfed {

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.features = Matrix(indices.size(), dim());
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), b.features.row(i).begin());
    b.labels.push_back(labels[indices[i]]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::unreadable, 0, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size())
    throw IdxError(IdxError::Kind::truncated, offset,
                   path + ": truncated header at byte offset " + std::to_string(offset) +
                       " (file has " + std::to_string(bytes.size()) + " bytes)");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_magic(std::uint32_t actual, std::uint32_t expected, const std::string& path) {
  if (actual != expected)
    throw IdxError(IdxError::Kind::bad_magic, 0,
                   path + ": bad magic at byte offset 0: expected " + hex32(expected) + ", got " +
                       hex32(actual));
}

void check_payload(const std::vector<std::uint8_t>& bytes, std::size_t header, std::size_t need,
                   const std::string& path) {
  if (bytes.size() < header + need)
    throw IdxError(IdxError::Kind::truncated, bytes.size(),
                   path + ": truncated payload at byte offset " + std::to_string(bytes.size()) +
                       ", expected " + std::to_string(header + need) + " bytes");
}

void put_be32(std::vector<char>& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void write_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  check_magic(read_be32(img, 0, images_path), kIdxImageMagic, images_path);
  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  constexpr std::size_t img_header = 16;
  check_payload(img, img_header, count * rows * cols, images_path);

  check_magic(read_be32(lab, 0, labels_path), kIdxLabelMagic, labels_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  constexpr std::size_t lab_header = 8;
  if (label_count != count)
    throw IdxError(IdxError::Kind::count_mismatch, 4,
                   labels_path + ": count mismatch at byte offset 4: " +
                       std::to_string(label_count) + " labels for " + std::to_string(count) +
                       " images");
  check_payload(lab, lab_header, count, labels_path);

  Dataset ds;
  const std::size_t dim = rows * cols;
  ds.features = Matrix(count, dim);
  auto& f = ds.features.data();
  for (std::size_t i = 0; i < count * dim; ++i) f[i] = img[img_header + i] / 255.0;
  ds.labels.resize(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[lab_header + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = count == 0 ? 0 : max_label + 1;
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path, std::size_t rows,
               std::size_t cols, std::span<const std::uint8_t> pixels,
               std::span<const std::uint8_t> labels) {
  if (rows * cols == 0 || pixels.size() != labels.size() * rows * cols)
    throw std::invalid_argument("write_idx: pixel count does not match labels x rows x cols");
  std::vector<char> img;
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(labels.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  img.insert(img.end(), pixels.begin(), pixels.end());
  std::vector<char> lab;
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.insert(lab.end(), labels.begin(), labels.end());
  write_bytes(images_path, img);
  write_bytes(labels_path, lab);
}

// ---------------------------------------------------------------------------
// Synthetic

Dataset synthetic_dataset(std::uint64_t seed, std::size_t classes, std::size_t dim,
                          std::size_t n_per_class, double separation) {
  if (classes < 2) throw std::invalid_argument("synthetic dataset needs at least 2 classes");
  if (dim < classes)
    throw std::invalid_argument("synthetic dataset needs dim >= classes (one axis per class)");
  Rng rng(derive_seed(seed, "synthetic"));
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.num_classes = classes;
  ds.features = Matrix(classes * n_per_class, dim);
  ds.labels.resize(classes * n_per_class);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t c = i % classes;
    ds.labels[i] = c;
    auto row = ds.features.row(i);
    for (auto& v : row) v = noise(rng);
    row[c] += separation;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Partition

namespace {

std::vector<std::vector<std::size_t>> class_chunks(const Dataset& ds, std::size_t cls,
                                                   std::size_t chunks, Rng rng) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == cls) idx.push_back(i);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out(chunks);
  const std::size_t base = idx.size() / chunks, extra = idx.size() % chunks;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    out[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                  idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

}  // namespace

Partition partition_noniid(const Dataset& train, const Dataset& test, std::size_t clients,
                           std::size_t classes_per_client, std::uint64_t seed) {
  const std::size_t num_classes = train.num_classes;
  if (clients == 0 || classes_per_client == 0)
    throw std::invalid_argument("partition: clients and classes_per_client must be >= 1");
  if (num_classes == 0) throw std::invalid_argument("partition: dataset has no classes");
  if (test.num_classes > num_classes)
    throw std::invalid_argument("partition: test set has more classes than train set");
  if (classes_per_client > num_classes)
    throw std::invalid_argument("partition: classes_per_client " +
                                std::to_string(classes_per_client) + " exceeds class count " +
                                std::to_string(num_classes));
  const std::size_t slots = clients * classes_per_client;
  if (slots % num_classes != 0) {
    std::size_t lo = clients, hi = clients;
    while (lo > 1 && (lo * classes_per_client) % num_classes != 0) --lo;
    while ((hi * classes_per_client) % num_classes != 0) ++hi;
    const bool lo_ok = (lo * classes_per_client) % num_classes == 0;
    const std::size_t nearest = (lo_ok && clients - lo <= hi - clients) ? lo : hi;
    throw std::invalid_argument("partition: clients x classes_per_client = " +
                                std::to_string(slots) + " is not divisible by " +
                                std::to_string(num_classes) + " classes; nearest valid client count is " +
                                std::to_string(nearest));
  }
  const std::size_t chunks_per_class = slots / num_classes;

  Rng perm_rng(derive_seed(seed, "partition/classes"));
  std::vector<std::size_t> perm(num_classes);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), perm_rng);

  std::vector<std::vector<std::vector<std::size_t>>> train_chunks, test_chunks;
  for (std::size_t c = 0; c < num_classes; ++c) {
    train_chunks.push_back(
        class_chunks(train, c, chunks_per_class, Rng(derive_seed(seed, "partition/train", c))));
    test_chunks.push_back(
        class_chunks(test, c, chunks_per_class, Rng(derive_seed(seed, "partition/test", c))));
  }

  Partition p;
  p.clients.resize(clients);
  for (std::size_t slot = 0; slot < slots; ++slot) {
    const std::size_t cls = perm[slot % num_classes];
    const std::size_t chunk = slot / num_classes;
    auto& shard = p.clients[slot / classes_per_client];
    shard.classes.push_back(cls);
    const auto& tr = train_chunks[cls][chunk];
    const auto& te = test_chunks[cls][chunk];
    shard.train.insert(shard.train.end(), tr.begin(), tr.end());
    shard.test.insert(shard.test.end(), te.begin(), te.end());
  }
  for (std::size_t k = 0; k < clients; ++k) {
    auto& s = p.clients[k];
    std::sort(s.classes.begin(), s.classes.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    if (s.train.empty() || s.test.empty())
      throw std::invalid_argument("partition: client " + std::to_string(k) +
                                  " received an empty train or test shard");
  }
  return p;
}

BatchIndices sample_batch(std::span<const std::size_t> shard, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (shard.empty()) throw std::invalid_argument("cannot sample from an empty shard");
  BatchIndices out;
  if (shard.size() >= batch_size) {
    std::vector<std::size_t> pool(shard.begin(), shard.end());
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(batch_size);
    out.indices = std::move(pool);
  } else {
    out.with_replacement = true;
    std::uniform_int_distribution<std::size_t> pick(0, shard.size() - 1);
    for (std::size_t i = 0; i < batch_size; ++i) out.indices.push_back(shard[pick(rng)]);
  }
  return out;
}

std::pair<Dataset, Dataset> load_data(const DataConfig& config, std::uint64_t seed) {
  if (config.source == DataConfig::Source::idx) {
    Dataset train = load_idx(config.train_images, config.train_labels);
    Dataset test = load_idx(config.test_images, config.test_labels);
    const std::size_t c = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = c;
    return {std::move(train), std::move(test)};
  }
  return {synthetic_dataset(derive_seed(seed, "data/train"), config.classes, config.dim,
                            config.train_per_class, config.separation),
          synthetic_dataset(derive_seed(seed, "data/test"), config.classes, config.dim,
                            config.test_per_class, config.separation)};
}

}  // namespace tdpfed
