#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blastlime/error.hpp"
#include "blastlime/nn/tensor.hpp"

namespace blastlime::nn {

// File layout (all integers little-endian):
//   "BLSK" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u64 dims,
//               product(dims) x f32 payload
//   u32 metadata length | UTF-8 JSON {"epoch", "seed", "config_hash", ...}

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Malformed };

  CheckpointError(Kind kind, const std::string& what) : Error(std::string(kind_name(kind)) + ": " + what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  static const char* kind_name(Kind kind) noexcept;

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  /// Full metadata object as JSON text (includes the three fields above).
  std::string metadata_json = "{}";

  const Tensor<float>& find(const std::string& name) const;  // Malformed if missing
};

/// Serialises to bytes. `metadata_json` must be a JSON object; epoch, seed
/// and config_hash are written into it, overriding any existing keys.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace blastlime::nn
