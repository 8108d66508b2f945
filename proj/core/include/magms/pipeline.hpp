// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace magms {

/// Library version string, e.g. "0.1.0".
std::string version();

/// UTC time as ISO-8601 with seconds.
std::string utc_timestamp();

/// Self-description of one artifact directory. Stored as
/// <dir>/run_manifest.json; rewritten atomically on every update.
struct RunManifest {
  static constexpr const char* kFileName = "run_manifest.json";

  std::string command;
  std::vector<std::string> arguments;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = version();
  std::string started_at;
  std::string finished_at;  // empty while running
  std::string status = "running";
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);

  void write(const std::string& directory) const;
  static RunManifest read(const std::string& directory);
};

/// Writes `content` to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace magms
