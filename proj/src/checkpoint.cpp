#include "tdpfed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tdpfed/errors.hpp"

namespace tdpfed {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'P', 'F'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw IoError("checkpoint truncated: expected at least " + std::to_string(pos_ + n) +
                    " bytes, file has " + std::to_string(bytes_.size()));
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void reals(std::vector<double>& out) {
    need(out.size() * 8);
    for (auto& v : out) v = f64();
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorizedModel& model) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    l.factors.validate();
    put_u32(out, static_cast<std::uint32_t>(l.kind));
    put_u32(out, static_cast<std::uint32_t>(l.factors.order()));
    for (const auto& a : l.factors.factors) put_u32(out, static_cast<std::uint32_t>(a.rows()));
    put_u32(out, static_cast<std::uint32_t>(l.factors.rank()));
    for (const auto& a : l.factors.factors)
      for (double v : a.data()) put_f64(out, v);
    for (double v : l.bias) put_f64(out, v);
  }
  return out;
}

TensorizedModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic, expected \"TDPF\"");
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: version mismatch, file has version " + std::to_string(version) +
                  ", this build reads version " + std::to_string(kCheckpointVersion));
  const std::uint32_t layers = r.u32();
  TensorizedModel model;
  for (std::uint32_t l = 0; l < layers; ++l) {
    TensorizedLayer layer;
    const std::uint32_t kind = r.u32();
    if (kind != static_cast<std::uint32_t>(LayerKind::linear) &&
        kind != static_cast<std::uint32_t>(LayerKind::conv))
      throw IoError("checkpoint: layer " + std::to_string(l) + " has unknown kind tag " +
                    std::to_string(kind));
    layer.kind = static_cast<LayerKind>(kind);
    const std::uint32_t modes = r.u32();
    const std::uint32_t want_modes = layer.kind == LayerKind::linear ? 2 : 4;
    if (modes != want_modes)
      throw IoError("checkpoint: layer " + std::to_string(l) + " has " + std::to_string(modes) +
                    " modes, expected " + std::to_string(want_modes));
    Shape extents(modes);
    for (auto& e : extents) e = r.u32();
    const std::uint32_t rank = r.u32();
    if (rank == 0) throw IoError("checkpoint: layer " + std::to_string(l) + " has rank 0");
    for (auto e : extents) {
      if (e == 0) throw IoError("checkpoint: layer " + std::to_string(l) + " has a zero extent");
      Matrix a(e, rank);
      r.reals(a.data());
      layer.factors.factors.push_back(std::move(a));
    }
    layer.bias.resize(layer.kind == LayerKind::linear ? extents[0] : extents[3]);
    r.reals(layer.bias);
    model.layers.push_back(std::move(layer));
  }
  if (r.pos() != r.size())
    throw IoError("checkpoint: " + std::to_string(r.size() - r.pos()) +
                  " trailing bytes after expected length " + std::to_string(r.pos()));
  return model;
}

void write_checkpoint(const std::string& path, const TensorizedModel& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

TensorizedModel read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace tdpfed
