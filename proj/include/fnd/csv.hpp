#pragma once

// Minimal CSV support for the pipeline's report and feature files: comma
// separated, header row, RFC 4180 quoting on write and read.

#include <iosfwd>
#include <string>
#include <vector>

namespace fnd {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws DataError if absent.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(std::istream& in, const std::string& source);
CsvTable read_csv(const std::string& path);

double csv_to_double(const std::string& cell, const std::string& source, std::size_t line);

/// Shortest round-trip text for a double.
std::string format_double(double v);
/// Fixed-point text with the given number of decimals.
std::string format_fixed(double v, int decimals);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
};

}  // namespace fnd
