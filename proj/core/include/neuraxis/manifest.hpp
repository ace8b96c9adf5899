#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace neuraxis::cli {

// FNV-1a over the file bytes, rendered as 16 hex digits.
std::string file_digest(const std::string& path);

// Per-stage provenance record. Timings are deliberately kept out (they live
// in timings.json) so manifests are byte-identical across reruns.
struct RunManifest {
  std::string stage;
  std::string tool_version;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // relative path -> digest
  std::map<std::string, std::string> outputs;  // relative path -> digest
};

void save_manifest(const std::string& path, const RunManifest& m);
std::optional<RunManifest> try_load_manifest(const std::string& path);

}  // namespace neuraxis::cli
