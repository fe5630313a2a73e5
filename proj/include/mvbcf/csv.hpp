#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mvbcf {

/// Comma-separated table with a header row. Fields may be double-quoted;
/// quotes inside quoted fields are doubled.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name, or -1.
  int column(const std::string& name) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);

/// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(const std::string& text);

/// Empty or NA (any case) counts as missing.
bool is_missing(const std::string& field);

}  // namespace mvbcf
