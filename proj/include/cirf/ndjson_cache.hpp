#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "cirf/error.hpp"

namespace cirf {

/// Append-only newline-delimited JSON store keyed by the "key" field of each
/// record. Every record is written with a single O_APPEND write(2), so
/// concurrent writers (threads or processes) never interleave inside a line.
/// Lines that fail to parse on load (e.g. a torn tail after a crash) are
/// skipped and counted. The first record for a key wins.
class NdjsonCache {
 public:
  NdjsonCache() = default;
  explicit NdjsonCache(std::filesystem::path path) : path_(std::move(path)) { load(); }

  std::optional<nlohmann::json> get(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, it->second);
  }

  bool contains(const std::string& key) const {
    std::shared_lock lock(mutex_);
    return entries_.contains(key);
  }

  /// Stores `record` (which must carry a string "key"). Returns false when the
  /// key was already present; the existing entry is kept.
  bool put(const nlohmann::json& record) {
    const std::string key = record.at("key").get<std::string>();
    std::unique_lock lock(mutex_);
    if (entries_.contains(key)) return false;
    if (!path_.empty()) append_line(record.dump() + "\n");
    entries_.emplace(key, record);
    return true;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  std::size_t corrupt_lines() const { return corrupt_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void load() {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("cannot read cache " + path_.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j["key"].is_string()) {
        ++corrupt_;
        continue;
      }
      entries_.try_emplace(j["key"].get<std::string>(), std::move(j));
    }
  }

  void append_line(const std::string& line) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw IoError("cannot open cache " + path_.string());
    const ssize_t written = ::write(fd, line.data(), line.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size()))
      throw IoError("short write to cache " + path_.string());
  }

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, nlohmann::json> entries_;
  std::size_t corrupt_ = 0;
};

}  // namespace cirf
