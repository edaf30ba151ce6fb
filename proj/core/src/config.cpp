#include "mesa/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mesa/errors.hpp"

namespace mesa::cfg {

namespace {

std::string_view trim(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  return text;
}

// Sections and keys are bare identifiers; anything that could collide with
// the file syntax is rejected so serialization always parses back.
bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

bool valid_value(std::string_view value) {
  if (value != trim(value)) return false;
  if (!value.empty() && (value.front() == '#' || value.front() == ';' || value.front() == '['))
    return false;
  return value.find('\n') == std::string_view::npos;
}

std::string qualified(std::string_view section, std::string_view key) {
  return std::string(section) + "." + std::string(key);
}

const std::string& require(const Config& config, std::string_view section,
                           std::string_view key) {
  const std::string* value = config.find(section, key);
  if (!value) throw ConfigError("config: missing key '" + qualified(section, key) + "'");
  return *value;
}

double parse_double_value(std::string_view text, std::string_view section,
                          std::string_view key) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("config: '" + qualified(section, key) + "' is not a number: '" +
                      std::string(text) + "'");
  return value;
}

long long parse_int_value(std::string_view text, std::string_view section,
                          std::string_view key) {
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("config: '" + qualified(section, key) + "' is not an integer: '" +
                      std::string(text) + "'");
  return value;
}

}  // namespace

const std::string* Config::find(std::string_view section, std::string_view key) const {
  for (const Entry& entry : entries)
    if (entry.section == section && entry.key == key) return &entry.value;
  return nullptr;
}

bool Config::has(std::string_view section, std::string_view key) const {
  return find(section, key) != nullptr;
}

void Config::set(std::string_view section, std::string_view key, std::string_view value) {
  if (!valid_name(section) || !valid_name(key))
    throw ConfigError("config: invalid name '" + qualified(section, key) + "'");
  if (!valid_value(value))
    throw ConfigError("config: invalid value for '" + qualified(section, key) + "'");
  for (Entry& entry : entries) {
    if (entry.section == section && entry.key == key) {
      entry.value = value;
      return;
    }
  }
  entries.push_back({std::string(section), std::string(key), std::string(value)});
}

std::string Config::get_string(std::string_view section, std::string_view key) const {
  return require(*this, section, key);
}

double Config::get_double(std::string_view section, std::string_view key) const {
  return parse_double_value(require(*this, section, key), section, key);
}

long long Config::get_int(std::string_view section, std::string_view key) const {
  return parse_int_value(require(*this, section, key), section, key);
}

bool Config::get_bool(std::string_view section, std::string_view key) const {
  const std::string& text = require(*this, section, key);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: '" + qualified(section, key) + "' is not a bool: '" + text + "'");
}

std::vector<std::size_t> Config::get_size_list(std::string_view section,
                                               std::string_view key) const {
  const std::string& text = require(*this, section, key);
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view part = trim(std::string_view(text).substr(start, end - start));
    const long long v = parse_int_value(part, section, key);
    if (v < 0)
      throw ConfigError("config: '" + qualified(section, key) + "' has a negative entry");
    out.push_back(static_cast<std::size_t>(v));
    start = end + 1;
  }
  return out;
}

std::vector<double> Config::get_double_list(std::string_view section,
                                            std::string_view key) const {
  const std::string& text = require(*this, section, key);
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view part = trim(std::string_view(text).substr(start, end - start));
    out.push_back(parse_double_value(part, section, key));
    start = end + 1;
  }
  return out;
}

std::string Config::get_string(std::string_view section, std::string_view key,
                               std::string_view fallback) const {
  const std::string* value = find(section, key);
  return value ? *value : std::string(fallback);
}

double Config::get_double(std::string_view section, std::string_view key,
                          double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

long long Config::get_int(std::string_view section, std::string_view key,
                          long long fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

bool Config::get_bool(std::string_view section, std::string_view key, bool fallback) const {
  return has(section, key) ? get_bool(section, key) : fallback;
}

std::vector<std::size_t> Config::get_size_list(std::string_view section, std::string_view key,
                                               std::vector<std::size_t> fallback) const {
  return has(section, key) ? get_size_list(section, key) : fallback;
}

Config parse(std::string_view text) {
  Config config;
  std::string section;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    if (start == text.size()) break;
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: line " + std::to_string(line_no) + ": malformed section");
      const std::string_view name = trim(line.substr(1, line.size() - 2));
      if (!valid_name(name))
        throw ConfigError("config: line " + std::to_string(line_no) +
                          ": invalid section name");
      section = name;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + ": expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: line " + std::to_string(line_no) +
                        ": key before any [section]");
    if (!valid_name(key))
      throw ConfigError("config: line " + std::to_string(line_no) + ": invalid key");
    if (config.has(section, key))
      throw ConfigError("config: line " + std::to_string(line_no) + ": duplicate key '" +
                        qualified(section, key) + "'");
    config.entries.push_back({section, std::string(key), std::string(value)});
  }
  return config;
}

std::string serialize(const Config& config) {
  std::string out;
  std::string current;
  for (const Entry& entry : config.entries) {
    if (!valid_name(entry.section) || !valid_name(entry.key))
      throw ConfigError("config: invalid name '" + qualified(entry.section, entry.key) + "'");
    if (!valid_value(entry.value))
      throw ConfigError("config: invalid value for '" +
                        qualified(entry.section, entry.key) + "'");
    if (entry.section != current) {
      if (!out.empty()) out += '\n';
      out += "[" + entry.section + "]\n";
      current = entry.section;
    }
    out += entry.key + " = " + entry.value + "\n";
  }
  return out;
}

Config load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(std::move(buffer).str());
}

void save(const Config& config, const std::string& path) {
  const std::string text = serialize(config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("config: cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("config: short write to '" + path + "'");
}

void apply_override(Config& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("config: override must look like section.key=value, got '" +
                      std::string(assignment) + "'");
  const std::string_view target = trim(assignment.substr(0, eq));
  const std::string_view value = trim(assignment.substr(eq + 1));
  const std::size_t dot = target.find('.');
  if (dot == std::string_view::npos)
    throw ConfigError("config: override key must be section.key, got '" +
                      std::string(target) + "'");
  config.set(trim(target.substr(0, dot)), trim(target.substr(dot + 1)), value);
}

}  // namespace mesa::cfg
