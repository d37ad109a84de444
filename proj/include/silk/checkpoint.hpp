#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "silk/model.hpp"

namespace silk {

// Checkpoint container, little-endian:
//   "SILKCKP1" | u32 version=1 | u32 len + UTF-8 metadata (key=value lines)
//   | u32 tensor count | per tensor: u16 name len, name, u8 rank,
//   rank x u64 dims, float32 data row-major.
inline constexpr char kCheckpointMagic[8] = {'S', 'I', 'L', 'K', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct CheckpointFile {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<NamedTensor> tensors;

  std::optional<std::string> get(const std::string& key) const;
  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
// Throws FileError with kind kBadMagic, kVersionMismatch, kTruncated or kIo.
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

// First and second Adam moments aligned with SilkModel::parameters().
template <typename T>
struct BasicAdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;
};
using AdamState = BasicAdamState<float>;

struct TrainingState {
  AdamState adam;
  std::int64_t iteration = 0;
};

void save_checkpoint(const std::filesystem::path& path, const SilkModel<float>& model,
                     const TrainingState* training = nullptr);

struct LoadedCheckpoint {
  SilkModel<float> model;
  std::optional<TrainingState> training;
};

// Throws FileError; an unrecognised backbone name is kUnknownBackbone, a
// missing or mis-shaped tensor is kMalformed.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace silk
