#include "xbm/util/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "xbm/util/error.hpp"

namespace xbm {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::set<std::string>& accepted_keys) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    ++line_no;
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "line " + std::to_string(line_no) + ": expected `key = value`");
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) fail(ErrorKind::config, "line " + std::to_string(line_no) + ": empty key");
    if (!accepted_keys.count(key)) fail(ErrorKind::config, "unknown key: " + key);
    if (cfg.values_.count(key)) fail(ErrorKind::config, "duplicate key: " + key);
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path, const std::set<std::string>& accepted_keys) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), accepted_keys);
}

void KeyValueConfig::require(const std::vector<std::string>& keys) const {
  for (const auto& k : keys)
    if (!has(k)) fail(ErrorKind::config, "missing required key: " + k);
}

std::optional<std::string> KeyValueConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  const auto* first = v->data();
  const auto* last = v->data() + v->size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last)
    fail(ErrorKind::config, "key " + key + ": expected integer, got `" + *v + "`");
  return out;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size())
    fail(ErrorKind::config, "key " + key + ": expected number, got `" + *v + "`");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "on" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "off" || *v == "0" || *v == "no") return false;
  fail(ErrorKind::config, "key " + key + ": expected boolean, got `" + *v + "`");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::string>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v->size()) {
    const auto comma = v->find(',', pos);
    auto item = trim(std::string_view(*v).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) fail(ErrorKind::config, "key " + key + ": empty list");
  return out;
}

std::string KeyValueConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace xbm
