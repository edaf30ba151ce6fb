#pragma once

// Plain-text key-value configuration with section headers:
//
//   # comment (';' also starts a comment line)
//   [section]
//   key = value
//
// Entries keep their insertion order, so parse(serialize(c)) == c. Values
// are uninterpreted strings; the typed getters parse on access and throw
// ConfigError naming the offending "section.key".

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mesa::cfg {

struct Entry {
  std::string section;
  std::string key;
  std::string value;

  bool operator==(const Entry&) const = default;
};

struct Config {
  std::vector<Entry> entries;

  // Pointer to the value, or nullptr when the key is absent.
  const std::string* find(std::string_view section, std::string_view key) const;
  bool has(std::string_view section, std::string_view key) const;

  // Replaces an existing entry's value in place, or appends a new entry.
  void set(std::string_view section, std::string_view key, std::string_view value);

  // Required getters throw ConfigError when the key is missing or malformed.
  std::string get_string(std::string_view section, std::string_view key) const;
  double get_double(std::string_view section, std::string_view key) const;
  long long get_int(std::string_view section, std::string_view key) const;
  bool get_bool(std::string_view section, std::string_view key) const;
  // Comma-separated non-negative integers, e.g. "256,256".
  std::vector<std::size_t> get_size_list(std::string_view section,
                                         std::string_view key) const;
  // Comma-separated doubles, e.g. "1,0.5,0.25".
  std::vector<double> get_double_list(std::string_view section, std::string_view key) const;

  // Defaulted getters fall back when the key is absent (malformed values
  // still throw).
  std::string get_string(std::string_view section, std::string_view key,
                         std::string_view fallback) const;
  double get_double(std::string_view section, std::string_view key, double fallback) const;
  long long get_int(std::string_view section, std::string_view key,
                    long long fallback) const;
  bool get_bool(std::string_view section, std::string_view key, bool fallback) const;
  std::vector<std::size_t> get_size_list(std::string_view section, std::string_view key,
                                         std::vector<std::size_t> fallback) const;

  bool operator==(const Config&) const = default;
};

Config parse(std::string_view text);
std::string serialize(const Config& config);

Config load(const std::string& path);
void save(const Config& config, const std::string& path);

// Applies one "section.key=value" assignment (the CLI's --set syntax).
void apply_override(Config& config, std::string_view assignment);

}  // namespace mesa::cfg
