#pragma once

// Minimal strict CSV reader/writer shared by every file format in the
// project: a fixed header line, comma-separated fields, no quoting.

#include <qkdsim/errors.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace qkdsim::csv {

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view field, std::size_t line) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw InputError("malformed number '" + std::string(field) + "'", line);
  }
  return value;
}

/// Iterates the data rows of a CSV stream whose first line must equal `header`.
/// `row` is called with the split fields and the 1-based line number.
template <class RowFn>
void read_rows(std::istream& in, std::string_view header, std::size_t columns, RowFn&& row) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InputError("empty input, expected header", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw InputError("expected header '" + std::string(header) + "'", line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != columns) {
      throw InputError("expected " + std::to_string(columns) + " fields", line_no);
    }
    row(fields, line_no);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

}  // namespace qkdsim::csv
