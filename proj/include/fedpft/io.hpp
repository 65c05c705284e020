#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fedpft::io {

// Writes to a sibling temp file and renames it over `path`, creating parent
// directories as needed. Readers never observe a partial file.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

std::vector<std::string> split_csv_line(std::string_view line);

// Header and rows of a comma-separated file without quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

double parse_real(const std::string& text);
long long parse_int(const std::string& text);

}  // namespace fedpft::io
