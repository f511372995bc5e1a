#include "s2tl/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "s2tl/errors.hpp"

namespace s2tl {

namespace pt = boost::property_tree;

RunConfig RunConfig::parse(std::string_view text, const RunConfig& base) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig out = base;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config key '" + section + "' must live in a [model] or [train] section");
    std::map<std::string, std::string> kv;
    for (const auto& [key, value] : body) kv[key] = value.get_value<std::string>();
    if (section == "model") out.model = ModelConfig::from_map(kv, out.model);
    else if (section == "train") out.train = TrainConfig::from_map(kv, out.train);
    else throw ConfigError("unknown config section [" + section + "]");
  }
  out.model.validate(true);
  out.train.validate();
  return out;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base);
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "[model]\n";
  for (const auto& [k, v] : model.to_map()) out << k << " = " << v << '\n';
  out << "\n[train]\n";
  for (const auto& [k, v] : train.to_map()) out << k << " = " << v << '\n';
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << serialize();
}

}  // namespace s2tl
