#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace xbm {

/// Line-oriented `key = value` configuration. Blank lines and lines starting
/// with '#' are ignored. Keys outside the accepted set are rejected.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::set<std::string>& accepted_keys);
  static KeyValueConfig load(const std::string& path, const std::set<std::string>& accepted_keys);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  /// Throws a config error naming the first missing key.
  void require(const std::vector<std::string>& keys) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Canonical text form: sorted `key = value` lines.
  std::string canonical_text() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::optional<std::string> raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

}  // namespace xbm
