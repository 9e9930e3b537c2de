// Copyright 2026 The teleop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat `key = value` files used for arm descriptions, calibration profiles and
// scenarios. `#` starts a comment. A key may repeat; repeated entries keep
// file order. Every lookup error names the file and line.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace teleop {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueFile {
 public:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };

  static KeyValueFile parse(const std::string& text, std::string source = "<memory>") {
    KeyValueFile kv;
    kv.source_ = std::move(source);
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
      const std::string line = trim(raw);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(kv.where(line_no) + ": expected 'key = value', got '" + line + "'");
      }
      Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
      if (e.key.empty()) throw ConfigError(kv.where(line_no) + ": empty key");
      kv.entries_.push_back(std::move(e));
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    auto kv = parse(ss.str(), path.string());
    kv.directory_ = path.parent_path();
    return kv;
  }

  const std::string& source() const { return source_; }
  const std::filesystem::path& directory() const { return directory_; }
  const std::vector<Entry>& entries() const { return entries_; }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  /// Last entry for `key`, or nullptr.
  const Entry* find(const std::string& key) const {
    const Entry* hit = nullptr;
    for (const auto& e : entries_) {
      if (e.key == key) hit = &e;
    }
    if (hit) used_[key] = true;
    return hit;
  }

  std::vector<const Entry*> all(const std::string& key) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries_) {
      if (e.key == key) out.push_back(&e);
    }
    used_[key] = true;
    return out;
  }

  const Entry& require(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ConfigError(source_ + ": missing required key '" + key + "'");
    return *e;
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = {}) const {
    if (const Entry* e = find(key)) return e->value;
    if (fallback) return *fallback;
    return require(key).value;
  }

  double number(const std::string& key, std::optional<double> fallback = {}) const {
    const Entry* e = find(key);
    if (!e) {
      if (fallback) return *fallback;
      e = &require(key);
    }
    const auto v = numbers(*e);
    if (v.size() != 1) throw ConfigError(where(e->line) + ": '" + key + "' expects one number");
    return v[0];
  }

  std::vector<double> numbers(const std::string& key, std::size_t count) const {
    const Entry& e = require(key);
    auto v = numbers(e);
    if (v.size() != count) {
      throw ConfigError(where(e.line) + ": '" + key + "' expects " + std::to_string(count) +
                        " numbers, got " + std::to_string(v.size()));
    }
    return v;
  }

  std::optional<std::vector<double>> optionalNumbers(const std::string& key,
                                                     std::size_t count) const {
    if (!has(key)) return std::nullopt;
    return numbers(key, count);
  }

  /// Parses whitespace-separated finite numbers of one entry.
  std::vector<double> numbers(const Entry& e) const {
    std::vector<double> out;
    std::istringstream in(e.value);
    std::string tok;
    while (in >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw ConfigError(where(e.line) + ": '" + e.key + "': not a finite number: '" + tok + "'");
      }
      out.push_back(v);
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw ConfigError(where(e->line) + ": '" + key + "' expects true/false");
  }

  /// Rejects keys nobody looked up; catches typos in hand-written files.
  void rejectUnused() const {
    for (const auto& e : entries_) {
      if (!used_.count(e.key)) throw ConfigError(where(e.line) + ": unknown key '" + e.key + "'");
    }
  }

  std::string where(int line) const { return source_ + ":" + std::to_string(line); }

  std::filesystem::path resolve(const std::string& relative) const {
    const std::filesystem::path p(relative);
    return p.is_absolute() ? p : directory_ / p;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::string source_;
  std::filesystem::path directory_;
  std::vector<Entry> entries_;
  mutable std::map<std::string, bool> used_;
};

}  // namespace teleop
