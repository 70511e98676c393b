#include "mvcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <unordered_map>

#include "mvcl/data.hpp"
#include "mvcl/error.hpp"

namespace mvcl {

namespace {

constexpr char kMagic[6] = {'M', 'V', 'C', 'K', '1', '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    require(in_.size() - pos_ >= n, ErrorKind::Parse,
            std::string("truncated checkpoint while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* stage_name(StageId s) {
  switch (s) {
    case StageId::Init:
      return "init";
    case StageId::Stage1:
      return "1";
    case StageId::Stage2:
      return "2";
    case StageId::Stage3:
      return "3";
    case StageId::Classifier:
      return "cls";
  }
  return "?";
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  put_u32(out, ckpt.version);
  out.insert(out.end(), ckpt.fingerprint.begin(), ckpt.fingerprint.end());
  put_u32(out, static_cast<std::uint32_t>(ckpt.stage));
  put_u64(out, ckpt.rng.seed);
  put_u64(out, ckpt.rng.counter);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0,
          ErrorKind::BadMagic, "not an MVCK1 checkpoint (bad magic)");
  Cursor c(bytes.subspan(sizeof kMagic));
  Checkpoint ckpt;
  ckpt.version = c.u32("version");
  require(ckpt.version == kCheckpointVersion, ErrorKind::Version,
          "checkpoint format version " + std::to_string(ckpt.version) +
              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto fp = c.take(ckpt.fingerprint.size(), "fingerprint");
  std::copy(fp.begin(), fp.end(), ckpt.fingerprint.begin());
  const std::uint32_t stage = c.u32("stage id");
  require(stage <= static_cast<std::uint32_t>(StageId::Classifier), ErrorKind::Parse,
          "unknown stage id " + std::to_string(stage));
  ckpt.stage = static_cast<StageId>(stage);
  ckpt.rng.seed = c.u64("rng seed");
  ckpt.rng.counter = c.u64("rng counter");

  const std::uint32_t count = c.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = c.u32("tensor name length");
    const auto name_bytes = c.take(name_len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = c.u32("tensor rank");
    require(rank <= 2, ErrorKind::Parse, "tensor '" + name + "' has unsupported rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(c.u32("tensor dims"));
    const std::size_t n = numel_of(shape);
    require(n <= c.remaining() / 8, ErrorKind::Parse,
            "truncated checkpoint in tensor '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(c.u64("tensor payload"));
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  require(c.remaining() == 0, ErrorKind::Parse, "trailing bytes after checkpoint tensor table");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::MissingCheckpoint,
          "checkpoint not found: " + path.string());
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

Checkpoint capture(const Model& model, StageId stage, const RngState& rng) {
  Checkpoint ckpt;
  ckpt.fingerprint = model.config().fingerprint();
  ckpt.stage = stage;
  ckpt.rng = rng;
  for (const auto& p : model.params()) ckpt.tensors.emplace_back(p.name, p.var.value());
  return ckpt;
}

void restore(Model& model, const Checkpoint& ckpt) {
  require(ckpt.fingerprint == model.config().fingerprint(), ErrorKind::Fingerprint,
          "checkpoint fingerprint " + hex(ckpt.fingerprint) +
              " does not match the model configuration " + hex(model.config().fingerprint()));
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name.emplace(name, &t);

  auto params = model.params();
  require(by_name.size() == params.size() && ckpt.tensors.size() == params.size(), ErrorKind::Parse,
          "checkpoint tensor table does not match the model");
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    require(it != by_name.end(), ErrorKind::Parse, "checkpoint lacks parameter '" + p.name + "'");
    require(it->second->shape() == p.var.shape(), ErrorKind::Parse,
            "checkpoint parameter '" + p.name + "' has shape " + shape_string(it->second->shape()));
  }
  for (auto& p : params) p.var.mutable_value() = *by_name.at(p.name);
}

}  // namespace mvcl
