#include "ordirank/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

namespace ordirank {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U value) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    const auto raw = std::bit_cast<Raw>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(raw >> (8 * i)));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  template <typename U>
  U le(const char* what) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U), what);
    Raw raw = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) raw |= static_cast<Raw>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(raw);
  }
  std::string str(const char* what) {
    const auto n = le<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.model.arch().serialize());
  w.le<std::uint8_t>(static_cast<std::uint8_t>(ckpt.model.split()));
  w.le<std::int32_t>(ckpt.meta.epoch);
  w.le<double>(ckpt.meta.val_loss);
  w.le<std::uint64_t>(ckpt.meta.seed);
  const auto state = ckpt.model.state();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(state.size()));
  for (const auto& nt : state) {
    w.str(nt.name);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : nt.tensor.data()) w.le<float>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic: expected \"2SRK\"", 0);
  }
  r.le<std::uint32_t>("magic");
  const std::size_t version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  const std::size_t arch_at = r.offset();
  ArchSpec arch;
  try {
    arch = ArchSpec::parse(r.str("arch"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid arch description: ") + e.what(), arch_at);
  }
  const std::size_t split_at = r.offset();
  const auto split_raw = r.le<std::uint8_t>("split");
  if (split_raw > 2) throw FormatError("invalid split " + std::to_string(split_raw), split_at);
  TrainingMeta meta;
  meta.epoch = r.le<std::int32_t>("epoch");
  meta.val_loss = r.le<double>("val_loss");
  meta.seed = r.le<std::uint64_t>("seed");

  std::optional<SubClassifier> model;
  try {
    model.emplace(arch, static_cast<Split>(split_raw));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid arch description: ") + e.what(), arch_at);
  }
  const auto count = r.le<std::uint32_t>("record count");
  std::vector<NamedTensor<float>> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str("record name");
    const auto ndim = r.le<std::uint8_t>("ndim");
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(r.le<std::uint32_t>("dims"));
    const std::size_t n = shape_numel(shape);
    r.need(n * 4, "payload");
    std::vector<float> values(n);
    for (auto& v : values) v = r.le<float>("payload");
    records.push_back({std::move(name), Tensor(std::move(shape), std::move(values)), true});
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.offset());
  try {
    model->load_state(records);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint parameters do not match arch: ") + e.what(), arch_at);
  }
  return Checkpoint{std::move(*model), meta};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ordirank
