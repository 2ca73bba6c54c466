#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fedsim {

// INI-style sectioned key/value text.  Sections and keys keep insertion
// order; '#' starts a comment; values are everything after '=' with outer
// whitespace trimmed.
class KvConfig {
 public:
  static KvConfig parse_file(const std::filesystem::path& path);
  static KvConfig parse_string(const std::string& text);

  void set(const std::string& section, const std::string& key, std::string value);
  // "section.key=value" (the CLI --set form)
  void apply_override(const std::string& dotted);

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  std::size_t get_size(const std::string& section, const std::string& key,
                       std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;
  std::string serialize() const;

  // formatting helpers shared by everything that writes numbers we intend to
  // re-read exactly
  static std::string format_double(double v);  // shortest %.17g round-trip
  static std::string format_size(std::size_t v);

 private:
  struct Entry {
    std::string section;
    std::string key;
    std::string value;
  };
  const Entry* find(const std::string& section, const std::string& key) const;
  std::vector<Entry> entries_;
};

}  // namespace fedsim
