#pragma once

// Run manifests: what a subcommand read and wrote, with content hashes.

#include <cstdint>
#include <map>
#include <string>

namespace nabu {

inline constexpr const char* kToolVersion = "0.3.0";

struct RunManifest {
  std::string command;
  std::string config;                        // config snapshot (key=value text)
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> FNV-1a hex of contents
  std::map<std::string, std::string> outputs;  // path -> FNV-1a hex of contents
  std::string vocab_hash;
  std::string checkpoint;
  std::string tool_version = kToolVersion;

  void add_input(const std::string& path);
  void add_output(const std::string& path);

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);

  /// Throws ManifestMismatch if any recorded file now has different contents.
  void verify() const;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
std::string file_hash(const std::string& path);

}  // namespace nabu
