#pragma once

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sketchpose {

/// Bad configuration or command line; reported before any work starts.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keys are compared with '-' and '_' treated alike.
inline std::string normalize_key(std::string key) {
  for (char& c : key)
    if (c == '-') c = '_';
  return key;
}

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace config_detail

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
inline std::map<std::string, std::string> parse_config(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(n);
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string key = normalize_key(config_detail::trim(line.substr(0, eq)));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (!out.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

/// Settings of one command: declared keys with defaults, overlaid in order
/// by a config file, the SKETCHPOSE_SEED environment variable, and flags.
class Settings {
 public:
  void declare(const std::string& key, std::string default_value) {
    values_[normalize_key(key)] = std::move(default_value);
  }

  bool known(const std::string& key) const { return values_.count(normalize_key(key)) > 0; }

  void set(const std::string& key, std::string value) {
    const std::string k = normalize_key(key);
    if (!values_.count(k)) throw UsageError("unknown setting '" + k + "'");
    values_[k] = std::move(value);
  }

  /// Unknown keys are rejected rather than ignored.
  void merge(const std::map<std::string, std::string>& file) {
    for (const auto& [k, v] : file) set(k, v);
  }

  void apply_seed_env() {
    if (!known("seed")) return;
    if (const char* s = std::getenv("SKETCHPOSE_SEED"); s && *s) set("seed", s);
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(normalize_key(key));
    if (it == values_.end()) throw std::logic_error("undeclared setting " + key);
    return it->second;
  }

  std::string required(const std::string& key) const {
    const std::string& v = str(key);
    if (v.empty()) throw UsageError("setting '" + normalize_key(key) + "' is required");
    return v;
  }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d))
      throw UsageError("setting '" + normalize_key(key) + "' must be a finite number, got '" + v + "'");
    return d;
  }

  long long integer(const std::string& key) const {
    const std::string& v = str(key);
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size())
      throw UsageError("setting '" + normalize_key(key) + "' must be an integer, got '" + v + "'");
    return x;
  }

  int positive(const std::string& key) const {
    const long long x = integer(key);
    if (x < 1 || x > 1'000'000'000) throw UsageError("setting '" + normalize_key(key) + "' must be positive");
    return static_cast<int>(x);
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size())
      throw UsageError("setting '" + normalize_key(key) + "' must be a non-negative integer, got '" + v + "'");
    return x;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("setting '" + normalize_key(key) + "' must be true or false, got '" + v + "'");
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed) const {
    const std::string& v = str(key);
    for (const auto& a : allowed)
      if (v == a) return v;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw UsageError("setting '" + normalize_key(key) + "' must be one of " + list + ", got '" + v + "'");
  }

  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sketchpose
