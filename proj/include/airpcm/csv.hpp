#pragma once

#include <string>
#include <vector>

namespace airpcm {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // each row padded to header width
};

// Comma-separated, optional double-quoted fields, UTF-8 (BOM tolerated).
CsvTable read_csv(const std::string& path);

// Throws DataError mentioning `where` on malformed input.
double parse_double(const std::string& text, const std::string& where);

// Shortest representation that round-trips exactly.
std::string format_double(double value);

}  // namespace airpcm
