#include "ftf/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include "ftf/error.hpp"

namespace ftf {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

Config Config::parse(std::istream& in) {
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(body.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": empty key");
    }
    cfg.set(std::move(key), trim(body.substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + file.string());
  return parse(in);
}

void Config::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

bool Config::contains(const std::string& key) const { return entries_.count(key) != 0; }

std::optional<std::string> Config::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto value = raw(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const double parsed = std::stod(*value, &used);
    if (used != value->size()) throw std::invalid_argument(*value);
    return parsed;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidConfig, key + ": not a number: " + *value);
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto value = raw(key);
  if (!value) return fallback;
  long long parsed = 0;
  const auto* end = value->data() + value->size();
  const auto [ptr, ec] = std::from_chars(value->data(), end, parsed);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorKind::InvalidConfig, key + ": not an integer: " + *value);
  }
  return parsed;
}

}  // namespace ftf
