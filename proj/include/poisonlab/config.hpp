#pragma once

// Flat "key = value" documents. '#' starts a comment; keys are unique.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "poisonlab/error.hpp"

namespace poisonlab {

class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text, const std::string& origin = "<config>") {
    KeyValueDoc doc;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      std::string key(trim(t.substr(0, eq)));
      std::string value(trim(t.substr(eq + 1)));
      if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!doc.values_.emplace(key, value).second) {
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
    }
    return doc;
  }

  static KeyValueDoc load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  // "key=value" override; replaces or adds.
  void apply_override(std::string_view assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ValidationError("override '" + std::string(assignment) + "' is not key=value");
    values_[std::string(trim(assignment.substr(0, eq)))] = std::string(trim(assignment.substr(eq + 1)));
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace poisonlab
