#include "fnd/kvconfig.hpp"

#include <cmath>
#include <istream>

#include "fnd/error.hpp"

namespace fnd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string where(const KvEntry& e) { return "config line " + std::to_string(e.line) + ": "; }

}  // namespace

std::vector<KvSection> parse_kv(std::istream& in) {
  std::vector<KvSection> sections(1);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw DataError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      sections.push_back({trim(line.substr(1, line.size() - 2)), line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    KvEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw DataError("config line " + std::to_string(line_no) + ": empty key");
    sections.back().entries.push_back(std::move(e));
  }
  return sections;
}

double kv_to_double(const KvEntry& e) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(e.value, &used);
  } catch (const std::exception&) {
    throw DataError(where(e) + e.key + " expects a number");
  }
  if (used != e.value.size() || !std::isfinite(v)) {
    throw DataError(where(e) + e.key + " expects a finite number");
  }
  return v;
}

std::int64_t kv_to_int(const KvEntry& e) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(e.value, &used);
  } catch (const std::exception&) {
    throw DataError(where(e) + e.key + " expects an integer");
  }
  if (used != e.value.size()) throw DataError(where(e) + e.key + " expects an integer");
  return v;
}

bool kv_to_bool(const KvEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw DataError(where(e) + e.key + " expects true or false");
}

}  // namespace fnd
