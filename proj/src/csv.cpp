#include "ordirank/csv.hpp"

#include <fmt/format.h>

namespace ordirank {

namespace {

void append_field(std::string& out, const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) {
    out += field;
    return;
  }
  out += '"';
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
}

void append_row(std::string& out, const CsvRow& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    append_field(out, row[i]);
  }
  out += '\n';
}

}  // namespace

std::string write_csv(const CsvRow& header, const std::vector<CsvRow>& rows) {
  std::string out;
  append_row(out, header);
  for (const auto& row : rows) append_row(out, row);
  return out;
}

std::string format_float(double value) { return fmt::format("{:.6g}", value); }

}  // namespace ordirank
