#include "nabu/manifest.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nabu/common.hpp"

namespace nabu {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!f) throw IoError("cannot write " + path);
}

std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

void RunManifest::add_input(const std::string& path) { inputs[path] = file_hash(path); }
void RunManifest::add_output(const std::string& path) { outputs[path] = file_hash(path); }

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["vocab_hash"] = vocab_hash;
  j["checkpoint"] = checkpoint;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    auto j = nlohmann::json::parse(text);
    m.tool_version = j.value("tool_version", "");
    m.command = j.value("command", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.config = j.value("config", "");
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    m.vocab_hash = j.value("vocab_hash", "");
    m.checkpoint = j.value("checkpoint", "");
  } catch (const nlohmann::json::exception& e) {
    throw ManifestMismatch(std::string("unreadable manifest: ") + e.what());
  }
  return m;
}

void RunManifest::save(const std::string& path) const { write_file(path, to_json()); }

RunManifest RunManifest::load(const std::string& path) { return from_json(read_file(path)); }

void RunManifest::verify() const {
  for (const auto* files : {&inputs, &outputs}) {
    for (const auto& [path, hash] : *files) {
      std::string now;
      try {
        now = file_hash(path);
      } catch (const IoError&) {
        throw ManifestMismatch("manifest artifact missing: " + path);
      }
      if (now != hash) throw ManifestMismatch("manifest hash mismatch for " + path);
    }
  }
}

}  // namespace nabu
