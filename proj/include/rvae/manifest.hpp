#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rvae {

/// `git hash-object` of a byte string: SHA-1 over "blob <size>\0" + bytes, lower-case hex.
std::string git_blob_hash(std::span<const unsigned char> bytes);
std::string git_blob_hash(std::string_view bytes);
std::string git_file_hash(const std::filesystem::path& file);

/// Git tree hash of the named files inside `dir` (mode 100644). Equals the id
/// `git write-tree` reports for a tree holding exactly those files.
std::string git_tree_hash(const std::filesystem::path& dir, std::vector<std::string> names);

/// Tree hash of a checkpoint directory's manifest.json and weights.bin.
std::string checkpoint_hash(const std::filesystem::path& dir);

/// ISO-8601 UTC time. Uses SOURCE_DATE_EPOCH when it is set.
std::string utc_timestamp();

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::optional<std::string> checkpoint_hash;
  std::string started_at;
  std::string finished_at;
  nlohmann::json outputs = nlohmann::json::object();

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace rvae
