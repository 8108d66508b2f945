// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "magms/error.hpp"

namespace magms {

namespace fs = std::filesystem;

std::string version() { return MAGMS_VERSION; }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},         {"arguments", arguments},
          {"config_hash", config_hash}, {"seed", seed},
          {"tool_version", tool_version}, {"started_at", started_at},
          {"finished_at", finished_at}, {"status", status},
          {"inputs", inputs},           {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << content;
    out.flush();
    if (!out) throw Error("failed writing '" + tmp + "'");
  }
  fs::rename(tmp, path);
}

void RunManifest::write(const std::string& directory) const {
  fs::create_directories(directory);
  write_file_atomic((fs::path(directory) / kFileName).string(), to_json().dump(2) + "\n");
}

RunManifest RunManifest::read(const std::string& directory) {
  const auto path = fs::path(directory) / kFileName;
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

}  // namespace magms
