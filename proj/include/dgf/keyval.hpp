#pragma once

// Flat "key = value" config files. One pair per line, '#' starts a comment,
// blank lines ignored. Values stay strings until a typed getter parses them.
// Consumers call take_* for every key they understand and then finish(),
// which rejects leftovers so misspelled keys never pass silently.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "dgf/errors.hpp"

namespace dgf {

class KeyVal {
 public:
  KeyVal() = default;

  static KeyVal parse(const std::string& text, const std::string& origin) {
    KeyVal kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ContractViolation(origin + ":" + std::to_string(lineno) +
                                ": expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ContractViolation(origin + ":" + std::to_string(lineno) +
                                ": empty key");
      if (kv.pairs_.count(key))
        throw ContractViolation(origin + ":" + std::to_string(lineno) +
                                ": duplicate key '" + key + "'");
      kv.pairs_[key] = value;
    }
    return kv;
  }

  bool has(const std::string& key) const { return pairs_.count(key) != 0; }

  // Programmatic override; replaces any value parsed from the file.
  void set(const std::string& key, const std::string& value) {
    pairs_[key] = value;
  }

  std::string take_string(const std::string& key, std::string fallback) {
    auto it = pairs_.find(key);
    if (it == pairs_.end()) return fallback;
    std::string v = it->second;
    pairs_.erase(it);
    return v;
  }

  double take_double(const std::string& key, double fallback) {
    auto it = pairs_.find(key);
    if (it == pairs_.end()) return fallback;
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(it->second, &pos);
    } catch (const std::exception&) {
      throw ContractViolation(bad(key, it->second, "number"));
    }
    if (pos != it->second.size())
      throw ContractViolation(bad(key, it->second, "number"));
    pairs_.erase(it);
    return v;
  }

  std::int64_t take_int(const std::string& key, std::int64_t fallback) {
    auto it = pairs_.find(key);
    if (it == pairs_.end()) return fallback;
    std::size_t pos = 0;
    std::int64_t v;
    try {
      v = std::stoll(it->second, &pos);
    } catch (const std::exception&) {
      throw ContractViolation(bad(key, it->second, "integer"));
    }
    if (pos != it->second.size())
      throw ContractViolation(bad(key, it->second, "integer"));
    pairs_.erase(it);
    return v;
  }

  bool take_bool(const std::string& key, bool fallback) {
    auto it = pairs_.find(key);
    if (it == pairs_.end()) return fallback;
    const std::string v = it->second;
    pairs_.erase(it);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ContractViolation(bad(key, v, "bool (true/false/1/0/on/off)"));
  }

  // Extracts every key starting with prefix into a new KeyVal with the
  // prefix stripped, so nested configs can live in one flat file.
  KeyVal take_prefix(const std::string& prefix) {
    KeyVal sub;
    sub.origin_ = origin_ + " [" + prefix + "*]";
    for (auto it = pairs_.begin(); it != pairs_.end();) {
      if (it->first.rfind(prefix, 0) == 0) {
        sub.pairs_[it->first.substr(prefix.size())] = it->second;
        it = pairs_.erase(it);
      } else {
        ++it;
      }
    }
    return sub;
  }

  // Call after all take_* calls; any remaining key is unknown to the consumer.
  void finish() const {
    if (pairs_.empty()) return;
    std::string msg = origin_ + ": unknown key(s):";
    for (const auto& [k, v] : pairs_) msg += " '" + k + "'";
    throw ContractViolation(msg);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::string bad(const std::string& key, const std::string& value,
                  const char* want) const {
    return origin_ + ": key '" + key + "' = '" + value + "' is not a " + want;
  }

  std::map<std::string, std::string> pairs_;
  std::string origin_ = "<config>";
};

}  // namespace dgf
