#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "semaug/archive.hpp"
#include "semaug/errors.hpp"

namespace semaug::detail {

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError("malformed JSON in '" + path.string() + "': " + ex.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& archive) {
  return std::filesystem::path(archive.string() + ".json");
}

}  // namespace semaug::detail
