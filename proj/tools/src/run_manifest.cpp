#include "s2tl/run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "s2tl/errors.hpp"

namespace s2tl {

namespace {

std::string sha1_hex(const std::string& bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("SHA-1 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string blob_hash(const std::string& bytes) {
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  return sha1_hex(blob + bytes);
}

std::string file_hash(const std::filesystem::path& path) { return blob_hash(slurp(path)); }

void RunManifest::add_input(const std::string& name, const std::filesystem::path& path) {
  inputs.push_back({name, file_hash(path)});
}

std::string RunManifest::content_hash() const {
  std::vector<std::string> lines;
  for (const auto& in : inputs) lines.push_back(in.name + " " + in.hash + "\n");
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l;
  return blob_hash(all);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["args"] = args;
  j["resolved_config"] = resolved_config;
  j["seed"] = seed;
  j["inputs"] = nlohmann::json::array();
  for (const auto& in : inputs) j["inputs"].push_back({{"name", in.name}, {"sha1", in.hash}});
  j["content_hash"] = content_hash();
  j["outputs"] = outputs;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.resolved_config = j.value("resolved_config", "");
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& in : j.at("inputs")) m.inputs.push_back({in.at("name"), in.at("sha1")});
    m.outputs = j.value("outputs", std::vector<std::string>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run manifest: ") + e.what());
  }
}

void RunManifest::save(const std::filesystem::path& dir) const {
  std::ofstream out(dir / kRunManifestFile);
  if (!out) throw DataError("cannot write " + (dir / kRunManifestFile).string());
  out << to_json().dump(2) << "\n";
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(slurp(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace s2tl
