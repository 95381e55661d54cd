#pragma once

// Plain-text key=value configuration: '#' starts a comment, blank lines are
// ignored, keys must be known to the schema they are applied to.

#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}
}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues kv;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

/// Parses "key=value" override strings (e.g. from the command line).
inline KeyValues parse_overrides(const std::vector<std::string>& items) {
  std::string joined;
  for (const auto& s : items) joined += s + "\n";
  std::istringstream in(joined);
  return parse_key_values(in, "<overrides>");
}

/// Named bindings from keys to typed fields.
class ConfigSchema {
 public:
  ConfigSchema& bind(const std::string& key, double& ref) {
    return add(key, [&ref, key](const std::string& v) { ref = parse_double(key, v); },
               [&ref] { return format_double(ref); });
  }
  ConfigSchema& bind(const std::string& key, std::size_t& ref) {
    return add(key, [&ref, key](const std::string& v) { ref = parse_uint<std::size_t>(key, v); },
               [&ref] { return std::to_string(ref); });
  }
  ConfigSchema& bind(const std::string& key, int& ref) {
    return add(key, [&ref, key](const std::string& v) {
      int out = 0;
      const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
      if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": " + v);
      ref = out;
    }, [&ref] { return std::to_string(ref); });
  }
  ConfigSchema& bind(const std::string& key, std::string& ref) {
    return add(key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; });
  }
  ConfigSchema& bind(const std::string& key, std::vector<double>& ref) {
    return add(key, [&ref, key](const std::string& v) {
      std::vector<double> out;
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_double(key, detail::trim(item)));
      ref = std::move(out);
    }, [&ref] {
      std::string s;
      for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + format_double(ref[i]);
      return s;
    });
  }

  /// Applies every entry; unknown keys are rejected before anything is set.
  void apply(const KeyValues& kv) const {
    for (const auto& [k, v] : kv)
      if (!setters_.contains(k)) throw ConfigError("unknown config key: " + k);
    for (const auto& [k, v] : kv) setters_.at(k)(v);
  }

  KeyValues effective() const {
    KeyValues out;
    for (const auto& [k, g] : getters_) out[k] = g();
    return out;
  }

  static double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("bad number for " + key + ": " + v);
    return out;
  }
  template <class T>
  static T parse_uint(const std::string& key, const std::string& v) {
    T out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("bad unsigned integer for " + key + ": " + v);
    return out;
  }
  static std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }

 private:
  ConfigSchema& add(const std::string& key, std::function<void(const std::string&)> set, std::function<std::string()> get) {
    setters_[key] = std::move(set);
    getters_[key] = std::move(get);
    return *this;
  }
  std::map<std::string, std::function<void(const std::string&)>> setters_;
  std::map<std::string, std::function<std::string()>> getters_;
};

inline void write_key_values(std::ostream& os, const KeyValues& kv) {
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

}  // namespace vdm
