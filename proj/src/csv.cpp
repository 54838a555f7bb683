#include "fnd/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "fnd/error.hpp"

namespace fnd {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError("CSV has no column " + name);
}

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& source,
                                    std::size_t line_no) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else if (c != '\r') {
      cells.back().push_back(c);
    }
  }
  if (quoted) throw DataError(source + ":" + std::to_string(line_no) + ": unterminated quote");
  return cells;
}

}  // namespace

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line, source, line_no);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw DataError(source + ": missing CSV header");
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path);
}

double csv_to_double(const std::string& cell, const std::string& source, std::size_t line) {
  double v = 0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataError(source + ":" + std::to_string(line) + ": not a number: " + cell);
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    const auto& c = cells[i];
    if (c.find_first_of(",\"\n") == std::string::npos) {
      out_ << c;
    } else {
      out_ << '"';
      for (char ch : c) {
        if (ch == '"') out_ << '"';
        out_ << ch;
      }
      out_ << '"';
    }
  }
  out_ << '\n';
}

}  // namespace fnd
