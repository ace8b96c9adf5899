#include "neuraxis/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "neuraxis/error.hpp"

namespace neuraxis::cli {

std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("cannot read file for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[16384];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    const std::streamsize got = f.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!f) break;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

void save_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["stage"] = m.stage;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw_io("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

std::optional<RunManifest> try_load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  nlohmann::json j;
  try {
    f >> j;
    RunManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const std::exception&) {
    return std::nullopt;  // malformed manifest: treat the stage as stale
  }
}

}  // namespace neuraxis::cli
