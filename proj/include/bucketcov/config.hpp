// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <utility>
#include <vector>

namespace bucketcov {

// Flat key=value configuration. Lines starting with '#' and blank lines are
// ignored; later assignments override earlier ones. Keys keep insertion
// order so rendered output is stable.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_stream(std::istream& in, const std::string& origin = "<stream>");

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  // One "key=value" line per entry, in insertion order.
  std::string render() const;

 private:
  const std::string* find(const std::string& key) const;

  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace bucketcov
