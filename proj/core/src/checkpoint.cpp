#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dfd/models.hpp"

namespace dfd {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'D', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void integer(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(std::string_view s) {
    integer(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint: truncated file");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U integer() {
    auto b = bytes(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  std::string text() {
    auto n = integer<std::uint32_t>();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.integer(kCheckpointVersion);
  w.text(to_string(model.config().kind));
  w.text(model.config().to_text());
  const auto& entries = model.parameters().entries();
  w.integer(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.text(e.name);
    w.integer(static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    w.integer(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.integer(static_cast<std::uint64_t>(d));
    for (float v : e.tensor.data()) w.integer(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("checkpoint: bad magic, not a checkpoint file");
  const auto version = r.integer<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));

  const auto kind_name = r.text();
  ModelConfig config;
  try {
    config = ModelConfig::from_text(r.text());
    if (parse_model_kind(kind_name) != config.kind)
      throw CheckpointError("checkpoint: model kind does not match stored config");
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }

  Model model = build_model(config, 0);
  const auto& entries = model.parameters().entries();
  const auto count = r.integer<std::uint32_t>();
  if (count != entries.size())
    throw CheckpointError("checkpoint: " + std::to_string(count) + " records, model has " +
                          std::to_string(entries.size()));
  for (const auto& e : entries) {
    const auto name = r.text();
    if (name != e.name)
      throw CheckpointError("checkpoint: expected record '" + e.name + "', found '" + name + "'");
    const bool trainable = r.integer<std::uint8_t>() & 1;
    if (trainable != e.trainable)
      throw CheckpointError("checkpoint: trainable flag mismatch for '" + name + "'");
    const auto rank = r.integer<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 16; ++i) shape.push_back(r.integer<std::uint64_t>());
    if (shape != e.tensor.shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "': stored " +
                            to_string(shape) + ", model " + to_string(e.tensor.shape()));
    auto dst = Tensor(e.tensor).mutable_data();
    for (auto& v : dst) v = std::bit_cast<float>(r.integer<std::uint32_t>());
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after last record");
  return model;
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dfd
