#pragma once

// Flat "key = value" config files. Lines starting with '#' are comments; a
// line of the form "[name]" opens a section. Sections may repeat.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fnd {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct KvSection {
  std::string name;  // empty for the top-level section
  std::size_t line = 0;
  std::vector<KvEntry> entries;
};

std::vector<KvSection> parse_kv(std::istream& in);

double kv_to_double(const KvEntry& e);
std::int64_t kv_to_int(const KvEntry& e);
bool kv_to_bool(const KvEntry& e);

}  // namespace fnd
