#include "fedsim/config.h"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedsim/errors.h"

namespace fedsim {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ParseError("config line " + std::to_string(lineno) +
                         ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || section.empty()) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": key outside a [section] or empty key");
    }
    cfg.set(section, key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

void KvConfig::set(const std::string& section, const std::string& key,
                   std::string value) {
  for (auto& e : entries_) {
    if (e.section == section && e.key == key) {
      e.value = std::move(value);
      return;
    }
  }
  entries_.push_back(Entry{section, key, std::move(value)});
}

void KvConfig::apply_override(const std::string& dotted) {
  const auto eq = dotted.find('=');
  if (eq == std::string::npos) {
    throw ParseError("override must look like section.key=value: " + dotted);
  }
  const std::string path = trim(dotted.substr(0, eq));
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
    throw ParseError("override must look like section.key=value: " + dotted);
  }
  set(path.substr(0, dot), path.substr(dot + 1), trim(dotted.substr(eq + 1)));
}

const KvConfig::Entry* KvConfig::find(const std::string& section,
                                      const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.section == section && e.key == key) return &e;
  }
  return nullptr;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

const std::string& KvConfig::get(const std::string& section,
                                 const std::string& key) const {
  const Entry* e = find(section, key);
  if (!e) throw LookupError("config has no " + section + "." + key);
  return e->value;
}

std::string KvConfig::get_or(const std::string& section, const std::string& key,
                             const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double KvConfig::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  const char* s = e->value.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0') {
    throw ParseError(section + "." + key + ": not a number: " + e->value);
  }
  return v;
}

std::size_t KvConfig::get_size(const std::string& section, const std::string& key,
                               std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(section, key, fallback));
}

std::uint64_t KvConfig::get_u64(const std::string& section, const std::string& key,
                                std::uint64_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  const char* s = e->value.c_str();
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0' || e->value.front() == '-') {
    throw ParseError(section + "." + key + ": not a non-negative integer: " +
                     e->value);
  }
  return v;
}

bool KvConfig::get_bool(const std::string& section, const std::string& key,
                        bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ParseError(section + "." + key + ": expected true/false: " + e->value);
}

std::vector<std::string> KvConfig::sections() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    bool seen = false;
    for (const auto& s : out) {
      if (s == e.section) {
        seen = true;
        break;
      }
    }
    if (!seen) out.push_back(e.section);
  }
  return out;
}

std::vector<std::string> KvConfig::keys(const std::string& section) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.section == section) out.push_back(e.key);
  }
  return out;
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& sec : sections()) {
    out += "[" + sec + "]\n";
    for (const auto& e : entries_) {
      if (e.section == sec) out += e.key + " = " + e.value + "\n";
    }
    out += "\n";
  }
  return out;
}

std::string KvConfig::format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string KvConfig::format_size(std::size_t v) {
  return std::to_string(v);
}

}  // namespace fedsim
