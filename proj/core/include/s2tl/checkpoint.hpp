#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s2tl/model.hpp"

namespace s2tl {

// Binary container, all integers little-endian:
//   "S2TLCKPT"  u32 version
//   u32 section count, then per section: u32 name length, name, u64 text length, text
//   u64 tensor count, then per tensor: u32 name length, name, u32 rank,
//       u64 dims[rank], f32 data[prod(dims)] (row-major)
// Sections hold text such as the model config ("model_config"), the
// vocabulary ("vocab") and trainer state ("train_state").

inline constexpr char kCheckpointMagic[8] = {'S', '2', 'T', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  std::map<std::string, std::string> sections;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  void put(std::string name, const Tensor& t);
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Config section plus every parameter under its registered name.
Checkpoint capture_model(const Model& model);
/// Rebuilds a model from the config section and copies all parameters.
Model restore_model(const Checkpoint& ck);
/// Copies every tensor whose name matches a model parameter with `prefix`.
/// Throws ConfigError listing each missing or mismatched tensor. Returns the
/// names transferred.
std::vector<std::string> load_parameters(Model& model, const Checkpoint& ck,
                                         const std::string& prefix = "");

}  // namespace s2tl
