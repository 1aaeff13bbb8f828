#include "dsts/keyvalue.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dsts/error.hpp"

namespace dsts {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& key, const std::string* raw, T& out) {
  if (raw == nullptr) return false;
  T value{};
  const char* end = raw->data() + raw->size();
  const auto [ptr, ec] = std::from_chars(raw->data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for '" + key + "': '" + *raw + "'");
  out = value;
  return true;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("line " + std::to_string(number) + " is not key=value: '" + t + "'");
    }
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void KeyValues::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

bool KeyValues::has(const std::string& key) const { return find(key) != nullptr; }

const std::string* KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return &v;
  }
  return nullptr;
}

bool KeyValues::get(const std::string& key, int& out) const { return parse_number(key, find(key), out); }
bool KeyValues::get(const std::string& key, std::uint64_t& out) const { return parse_number(key, find(key), out); }
bool KeyValues::get(const std::string& key, double& out) const { return parse_number(key, find(key), out); }

bool KeyValues::get(const std::string& key, bool& out) const {
  const std::string* raw = find(key);
  if (raw == nullptr) return false;
  if (*raw == "true" || *raw == "1" || *raw == "on") {
    out = true;
  } else if (*raw == "false" || *raw == "0" || *raw == "off") {
    out = false;
  } else {
    throw ConfigError("bad boolean for '" + key + "': '" + *raw + "'");
  }
  return true;
}

bool KeyValues::get(const std::string& key, std::string& out) const {
  const std::string* raw = find(key);
  if (raw == nullptr) return false;
  out = *raw;
  return true;
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace dsts
