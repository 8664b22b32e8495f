#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace longipred::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Strict reader: UTF-8, comma separated, no quoting or escapes. A trailing
/// '\r' per line is tolerated; every row must have exactly as many fields as
/// the header.
Table read_file(const std::filesystem::path& path);

/// Writes header + rows, '\n' line endings, trailing newline. Field content
/// must not contain ',' or newlines; the writer rejects it.
void write_file(const std::filesystem::path& path, const Table& table);

std::vector<std::string> split_fields(const std::string& line);

}  // namespace longipred::csv
