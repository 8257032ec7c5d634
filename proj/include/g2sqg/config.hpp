#pragma once

// Run configuration: a closed set of keys with defaults, read from
// `key = value` files (with # comments) and overridden by flags.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "g2sqg/errors.hpp"

namespace g2s {

/// Bad command line or configuration; reported with exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

class RunConfig {
 public:
  /// Every key at its default value.
  RunConfig();

  /// Applies `key = value` lines. Unknown keys and malformed lines are
  /// UsageErrors. Relative data paths are resolved against `base_dir` when given.
  void read(std::istream& in, std::string_view source = "config", const std::filesystem::path& base_dir = {});
  /// Relative data paths in the file are taken relative to its directory.
  void read_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  bool known(std::string_view key) const;
  const std::string& raw(std::string_view key) const;
  std::string string(std::string_view key) const { return raw(key); }
  long long integer(std::string_view key) const;
  double real(std::string_view key) const;
  bool boolean(std::string_view key) const;
  std::uint64_t seed() const;

  /// Key/value pairs in key order.
  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

  /// FNV-1a hash over the keys that shape the model.
  std::uint64_t model_hash() const;

  /// Parses every typed value, throwing UsageError on the first bad one.
  void check_types() const;

  static const std::vector<std::pair<std::string, std::string>>& defaults();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

/// Independent seed for a named subsystem.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace g2s
