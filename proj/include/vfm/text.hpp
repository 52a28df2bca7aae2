#pragma once

// Small text helpers shared by the file formats: ISO-8601 timestamps, lossless
// number formatting, key/value configuration files and content hashing.

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "vfm/errors.hpp"

namespace vfm {

using Timestamp = std::int64_t;  // seconds since 1970-01-01T00:00:00Z

inline constexpr Timestamp kSecondsPerDay = 86400;

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw ContractError("format_double: to_chars failed");
  return std::string(buf.data(), ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <class Int>
std::optional<Int> parse_integer(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Accepts YYYY-MM-DDTHH:MM:SSZ (UTC only).
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  s = trim(s);
  if (s.size() != 20 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':' || s[19] != 'Z') {
    return std::nullopt;
  }
  const auto y = parse_integer<int>(s.substr(0, 4));
  const auto mo = parse_integer<unsigned>(s.substr(5, 2));
  const auto d = parse_integer<unsigned>(s.substr(8, 2));
  const auto h = parse_integer<int>(s.substr(11, 2));
  const auto mi = parse_integer<int>(s.substr(14, 2));
  const auto se = parse_integer<int>(s.substr(17, 2));
  if (!y || !mo || !d || !h || !mi || !se) return std::nullopt;
  if (*h > 23 || *mi > 59 || *se > 59) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{*mo},
                                        std::chrono::day{*d}};
  if (!ymd.ok()) return std::nullopt;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * kSecondsPerDay + *h * 3600 + *mi * 60 + *se;
}

inline std::string format_iso8601(Timestamp t) {
  Timestamp days = t / kSecondsPerDay;
  Timestamp rem = t % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.day()) << 'T' << std::setw(2) << rem / 3600 << ':'
     << std::setw(2) << (rem / 60) % 60 << ':' << std::setw(2) << rem % 60 << 'Z';
  return os.str();
}

// FNV-1a, 64 bit. Used for artifact fingerprints in run manifests.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

// Flat `key = value` configuration. Lines starting with '#' are comments.
// Every typed getter marks the key as consumed so leftovers can be reported.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::string& origin = "config") {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    for (auto line : split_view(text, '\n')) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      }
      cfg.set(key, value);
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) { return parse(read_file(path), path); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  const std::map<std::string, std::string>& entries() const { return values_; }

  std::optional<std::string> get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get_string(key).value_or(fallback);
  }

  double get_double(const std::string& key, double fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    const auto v = parse_double(*s);
    if (!v) throw ConfigError("key '" + key + "': not a number: '" + *s + "'");
    return *v;
  }

  std::optional<double> get_optional_double(const std::string& key) const {
    if (!contains(key)) return std::nullopt;
    return get_double(key, 0.0);
  }

  template <class Int>
  Int get_integer(const std::string& key, Int fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    const auto v = parse_integer<Int>(*s);
    if (!v) throw ConfigError("key '" + key + "': not an integer: '" + *s + "'");
    return *v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto s = get_string(key);
    if (!s) return fallback;
    if (*s == "true" || *s == "1" || *s == "on" || *s == "yes") return true;
    if (*s == "false" || *s == "0" || *s == "off" || *s == "no") return false;
    throw ConfigError("key '" + key + "': not a boolean: '" + *s + "'");
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void require_all_used(const std::string& origin) const {
    const auto unused = unused_keys();
    if (unused.empty()) return;
    std::string msg = origin + ": unknown key(s):";
    for (const auto& k : unused) msg += " " + k;
    throw ConfigError(msg);
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace vfm
