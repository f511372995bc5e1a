#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "s2tl/model.hpp"
#include "s2tl/training.hpp"

namespace s2tl {

/// Model and training settings, stored as an INI file with [model] and
/// [train] sections of key = value lines.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Keys present in the text override `base`; unknown sections or keys
  /// are a ConfigError.
  static RunConfig parse(std::string_view text, const RunConfig& base);
  static RunConfig load(const std::filesystem::path& path, const RunConfig& base);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
};

}  // namespace s2tl
