#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace s2tl {

/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string blob_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

struct HashedInput {
  std::string name;  // role or path relative to its directory, so hashes move with the data
  std::string hash;
};

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;  // argv after the program name
  std::string resolved_config;    // INI text, empty for commands without one
  std::uint64_t seed = 0;
  std::vector<HashedInput> inputs;
  std::vector<std::string> outputs;  // relative to the output directory

  void add_input(const std::string& name, const std::filesystem::path& path);
  /// SHA-1 over the sorted "name hash" lines of all inputs.
  std::string content_hash() const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& dir) const;
  static RunManifest load(const std::filesystem::path& path);
};

inline constexpr const char* kRunManifestFile = "run_manifest.json";

}  // namespace s2tl
