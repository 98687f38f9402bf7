#include "blastlime/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace blastlime::nn {
namespace {

using Kind = CheckpointError::Kind;

constexpr std::uint8_t kMagic[4] = {'B', 'L', 'S', 'K'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void le(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    le(bits);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointError(Kind::Truncated, std::string("file ends inside ") + what);
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() {
    const auto bits = le<std::uint32_t>("tensor payload");
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* CheckpointError::kind_name(Kind kind) noexcept {
  switch (kind) {
    case Kind::Io:
      return "checkpoint I/O error";
    case Kind::BadMagic:
      return "checkpoint bad magic";
    case Kind::VersionMismatch:
      return "checkpoint version mismatch";
    case Kind::Truncated:
      return "checkpoint truncated";
    case Kind::Malformed:
      return "checkpoint malformed";
  }
  return "checkpoint error";
}

const Tensor<float>& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw CheckpointError(Kind::Malformed, "missing tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json meta = nlohmann::json::parse(checkpoint.metadata_json.empty() ? "{}" : checkpoint.metadata_json);
  if (!meta.is_object()) throw ConfigError("checkpoint metadata must be a JSON object");
  meta["epoch"] = checkpoint.epoch;
  meta["seed"] = checkpoint.seed;
  meta["config_hash"] = checkpoint.config_hash;

  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& nt : checkpoint.tensors) {
    if (nt.name.size() > 0xFFFF) throw ConfigError("tensor name too long: " + nt.name.substr(0, 32));
    if (nt.tensor.rank() > 0xFF) throw ConfigError("tensor rank too large");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(nt.name.size()));
    w.bytes(nt.name.data(), nt.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) w.le<std::uint64_t>(d);
    for (float v : nt.tensor.data()) w.f32(v);
  }
  const std::string text = meta.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw CheckpointError(Kind::Truncated, "file shorter than the magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(Kind::BadMagic, "expected \"BLSK\"");
  Reader r(bytes);
  r.text(4, "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::VersionMismatch, "file version " + std::to_string(version) + ", supported " +
                                                     std::to_string(kCheckpointVersion));
  }
  const auto count = r.le<std::uint32_t>("tensor count");
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    NamedTensor nt;
    nt.name = r.text(name_len, "tensor name");
    const auto rank = r.le<std::uint8_t>("tensor rank");
    Shape shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.le<std::uint64_t>("tensor dims"));
      if (d != 0 && elements > r.remaining() / d) {
        throw CheckpointError(Kind::Truncated, "tensor '" + nt.name + "' larger than the remaining file");
      }
      elements *= d;
    }
    r.need(elements * 4, "tensor payload");
    std::vector<float> data(elements);
    for (auto& v : data) v = r.f32();
    nt.tensor = Tensor<float>(std::move(shape), std::move(data));
    ck.tensors.push_back(std::move(nt));
  }
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  const std::string text = r.text(meta_len, "metadata");
  if (r.remaining() != 0) throw CheckpointError(Kind::Malformed, "trailing bytes after metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
    ck.epoch = meta.at("epoch").get<int>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.config_hash = meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Malformed, std::string("metadata: ") + e.what());
  }
  ck.metadata_json = meta.dump();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::Io, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::Io, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(Kind::Io, "cannot rename to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace blastlime::nn
