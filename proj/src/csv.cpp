#include "longipred/csv.hpp"

#include <fstream>

#include "longipred/errors.hpp"

namespace longipred::csv {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  Table table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      table.header = split_fields(line);
      continue;
    }
    if (line.empty() && in.peek() == std::ifstream::traits_type::eof()) break;
    auto fields = split_fields(line);
    if (fields.size() != table.header.size()) {
      fail(ErrorCode::RaggedRow,
           path.filename().string() + " line " + std::to_string(lineno) +
               ": expected " + std::to_string(table.header.size()) +
               " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (lineno == 0) fail(ErrorCode::ParseError, path.string() + ": empty file");
  return table;
}

namespace {

void check_field(const std::string& field) {
  if (field.find(',') != std::string::npos ||
      field.find('\n') != std::string::npos ||
      field.find('\r') != std::string::npos) {
    fail(ErrorCode::InvalidValue, "field contains separator: " + field);
  }
}

void write_row(std::ofstream& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    check_field(row[i]);
    if (i) out << ',';
    out << row[i];
  }
  out << '\n';
}

}  // namespace

void write_file(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_row(out, table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      fail(ErrorCode::RaggedRow, "row width " + std::to_string(row.size()) +
                                     " does not match header width " +
                                     std::to_string(table.header.size()));
    }
    write_row(out, row);
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace longipred::csv
