#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace spill {

// Minimal RFC 4180 reader: header row, comma separated, double-quoted fields
// may contain commas and doubled quotes.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path);
  static CsvTable parse(std::string_view text, std::string source = "<memory>");

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  // Throws ValidationError naming the file when the column is missing.
  std::size_t column(std::string_view name) const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);
std::string csv_escape(std::string_view field);

// Writes via a sibling temp file and rename so readers never observe a
// partially written output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace spill
