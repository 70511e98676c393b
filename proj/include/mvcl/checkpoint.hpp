#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/model.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Stage ids stored in checkpoints.
enum class StageId : std::uint32_t { Init = 0, Stage1 = 1, Stage2 = 2, Stage3 = 3, Classifier = 4 };
const char* stage_name(StageId s);

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Fingerprint fingerprint{};
  StageId stage = StageId::Init;
  RngState rng;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

/// MVCK1 layout, little-endian: magic "MVCK1\n", u32 version, 32-byte config
/// fingerprint, u32 stage id, u64 rng seed, u64 rng counter, u32 tensor
/// count, then per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims,
/// f64 payload.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Parses the whole buffer before returning; any defect throws.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const Model& model, StageId stage, const RngState& rng);
/// Verifies fingerprint, names and shapes for every parameter before
/// writing any of them into the model.
void restore(Model& model, const Checkpoint& ckpt);

}  // namespace mvcl
