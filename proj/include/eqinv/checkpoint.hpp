#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eqinv/model.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout (all integers little-endian):
///
///   magic "EQVCKPT\0", u32 version
///   u32 entry count, then per entry: u32 key length, key, u32 value length, value
///   u32 record count, then per record:
///     u32 name length, name, u8 dtype (0 = f32, 1 = f64), u32 rank, u64 dims[rank],
///     values in little-endian IEEE order
///   u64 FNV-1a hash of every preceding byte
///
/// Model weights are f32. The memory bank is stored as f64 so resumed runs
/// continue bit-exactly.
struct Checkpoint {
  ModelConfig model;
  std::string run_config;  ///< effective configuration, key=value lines
  std::uint64_t generation = 0;
  std::uint64_t epoch = 0;  ///< completed epochs
  std::uint64_t step = 0;
  std::vector<NamedTensor<float>> parameters;
  std::vector<NamedTensor<float>> buffers;
  std::vector<Tensor<float>> velocity;  ///< aligned with parameters, or empty
  Tensor<double> bank_slots;            ///< empty when there is no bank
  double bank_momentum = 0.0;
  std::string bank_rng;
  std::string trainer_rng;
};

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws IoError for unreadable or truncated files, FormatError for a
/// foreign or corrupt layout and VersionMismatchError for another version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Checkpoint holding just the model state.
Checkpoint snapshot_model(const Model<float>& model);

/// Builds a model from `checkpoint`, or from `expected` when given, and copies
/// the stored tensors in. ShapeMismatchError when names or shapes differ.
Model<float> restore_model(const Checkpoint& checkpoint, const ModelConfig* expected = nullptr);

inline Model<float> load_model(const std::filesystem::path& path,
                               const ModelConfig* expected = nullptr) {
  return restore_model(read_checkpoint(path), expected);
}

}  // namespace eqinv
