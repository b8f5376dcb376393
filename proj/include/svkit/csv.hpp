#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace svkit {

// Minimal RFC-4180 reader/writer. Quoted fields may contain commas,
// doubled quotes, and newlines.
std::vector<std::vector<std::string>> parse_csv(std::istream& in);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace svkit
