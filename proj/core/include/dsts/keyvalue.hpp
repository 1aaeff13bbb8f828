#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dsts {

/// Ordered `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues read_file(const std::string& path);

  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;
  const std::string* find(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // Typed reads. A missing key leaves `out` untouched and returns false; a
  // malformed value throws ConfigError naming the key.
  bool get(const std::string& key, int& out) const;
  bool get(const std::string& key, std::uint64_t& out) const;
  bool get(const std::string& key, double& out) const;
  bool get(const std::string& key, bool& out) const;
  bool get(const std::string& key, std::string& out) const;

  std::string to_text() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace dsts
