#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace ftf {

// Flat key=value configuration. Blank lines and lines starting with '#' are
// ignored; keys and values are trimmed. Later keys override earlier ones.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in);
  static Config load(const std::filesystem::path& file);

  void set(std::string key, std::string value);
  bool contains(const std::string& key) const;
  std::optional<std::string> raw(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;

  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace ftf
