#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scvm/config.hpp"
#include "scvm/model.hpp"
#include "scvm/optim.hpp"

namespace scvm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  bool frozen = false;
  std::vector<float> values;
};

/// In-memory image of a checkpoint file.
///
/// File layout (little-endian):
///   "SCVM" | u32 version | u64 header bytes | JSON header | f32 payload
/// The header holds the run config, phase, step, optimizer step count and a
/// tensor manifest {name, dtype, shape, offset, frozen}; offsets are in
/// bytes from the start of the payload. Adam moments are stored as tensors
/// named "adam.m.<param>" and "adam.v.<param>".
struct Checkpoint {
  RunConfig config;
  std::string phase;  // "init", "pretrain" or "main"
  std::size_t step = 0;
  std::size_t optimizer_steps = 0;
  std::vector<NamedTensor> tensors;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Writes through a temporary file and a rename, so an interrupted write
/// never replaces a good checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint capture_checkpoint(const Model<float>& model, const AdamW<float>* optimizer, const RunConfig& config,
                              std::string phase, std::size_t step);
/// Rebuilds the model from the stored config and overwrites every
/// parameter. Throws IoError if the manifest and the model disagree.
Model<float> restore_model(const Checkpoint& ckpt);
AdamW<float> restore_optimizer(const Checkpoint& ckpt);

}  // namespace scvm
