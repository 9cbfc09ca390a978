#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dualattn/common.hpp"

namespace dualattn {

// UTF-8 "key=value" text files, one pair per line, '#' starts a comment.
// Used for slide manifests, generator configs and run-config snapshots.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::istream& in) {
    KvConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw config_error("malformed line " + std::to_string(lineno) + ": " + trimmed);
      std::string key = trim(trimmed.substr(0, eq));
      std::string val = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw config_error("empty key at line " + std::to_string(lineno));
      cfg.set(key, val);
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    return parse(in);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write config file: " + path);
    for (const auto& k : order_) out << k << "=" << values_.at(k) << "\n";
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }
  void set(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    set(key, os.str());
  }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("missing config key: " + key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  long long get_int(const std::string& key) const { return parse_int(key, get_string(key)); }
  long long get_int(const std::string& key, long long dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  double get_real(const std::string& key) const { return parse_real(key, get_string(key)); }
  double get_real(const std::string& key, double dflt) const {
    return has(key) ? get_real(key) : dflt;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("key '" + key + "' is not a boolean: " + v);
  }

  const std::vector<std::string>& keys() const { return order_; }

  // Rejects any key outside the allowed set; catches typos in run configs.
  void reject_unknown_keys(const std::set<std::string>& allowed) const {
    for (const auto& k : order_)
      if (!allowed.count(k)) throw config_error("unknown config key: " + k);
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }
  static long long parse_int(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (...) {
      throw config_error("key '" + key + "' is not an integer: " + v);
    }
  }
  static double parse_real(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (...) {
      throw config_error("key '" + key + "' is not a number: " + v);
    }
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace dualattn
