// SPDX-License-Identifier: Apache-2.0
#include "bucketcov/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "bucketcov/errors.hpp"

namespace bucketcov {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw ContractError("config value for '" + key + "' is not a valid number: " + value);
  }
  return out;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return from_stream(in, path);
}

Config Config::from_stream(std::istream& in, const std::string& origin) {
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw IoError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw IoError(origin + ":" + std::to_string(line_no) + ": empty config key");
    }
    cfg.set(key, value);
  }
  if (in.bad()) throw IoError("error while reading config: " + origin);
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  items_.emplace_back(key, value);
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

const std::string* Config::find(const std::string& key) const {
  for (const auto& [k, v] : items_) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v != nullptr ? *v : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v != nullptr ? parse_number<double>(key, *v) : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  const std::string* v = find(key);
  return v != nullptr ? parse_number<int>(key, *v) : fallback;
}

std::uint64_t Config::get_uint64(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  return v != nullptr ? parse_number<std::uint64_t>(key, *v) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (v == nullptr) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ContractError("config value for '" + key + "' is not a boolean: " + *v);
}

std::string Config::render() const {
  std::ostringstream out;
  for (const auto& [k, v] : items_) {
    out << k << '=' << v << '\n';
  }
  return out.str();
}

}  // namespace bucketcov
