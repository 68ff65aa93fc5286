#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "accent_ssl/errors.hpp"

namespace accent_ssl {

// Flat key=value configuration. Lines starting with '#' are comments; a line
// `include = other.cfg` splices another file (resolved relative to the
// including file) at that point, so later keys override the profile.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::filesystem::path& path) {
    KeyValueConfig cfg;
    std::set<std::string> stack;
    cfg.load_file(path, stack);
    return cfg;
  }

  static KeyValueConfig from_string(const std::string& text) {
    KeyValueConfig cfg;
    std::set<std::string> stack;
    cfg.load_text(text, std::filesystem::current_path(), "<string>", stack);
    return cfg;
  }

  // Accepts "key=value".
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <class T>
  void set_default(const std::string& key, const T& value) {
    if (!has(key)) set(key, to_text(value));
  }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const { return parse_number<double>(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  long long get_int(const std::string& key) const { return parse_number<long long>(key, get_string(key)); }
  long long get_int(const std::string& key, long long fallback) const { return has(key) ? get_int(key) : fallback; }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
  }

  // Comma-separated list; empty string or "none" is the empty list.
  std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<long long> out;
    const std::string v = get_string(key);
    if (v.empty() || v == "none") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<long long>(key, trim(item)));
    return out;
  }
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    std::stringstream ss(get_string(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
    return out;
  }

  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  // Canonical text: sorted keys, one `key = value` per line.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : to_text()) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config " + path.string());
    out << to_text();
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <class T>
  static std::string to_text(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_convertible_v<T, std::string>) {
      return std::string(v);
    } else {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    }
  }

 private:
  template <class T>
  static T parse_number(const std::string& key, const std::string& text) {
    std::istringstream is(text);
    T v{};
    is >> v;
    if (is.fail() || !is.eof())
      throw ConfigError("config key '" + key + "' expects a number, got '" + text + "'");
    return v;
  }

  void load_file(const std::filesystem::path& path, std::set<std::string>& stack) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    const std::string canon = std::filesystem::weakly_canonical(path).string();
    if (!stack.insert(canon).second) throw ConfigError("config include cycle at " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    load_text(buf.str(), path.parent_path(), path.string(), stack);
    stack.erase(canon);
  }

  void load_text(const std::string& text, const std::filesystem::path& base, const std::string& origin,
                 std::set<std::string>& stack) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key == "include") {
        load_file(base / value, stack);
      } else {
        values_[key] = value;
      }
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace accent_ssl
