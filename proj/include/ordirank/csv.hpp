#pragma once

#include <string>
#include <vector>

namespace ordirank {

using CsvRow = std::vector<std::string>;

// Header row first, LF line endings. Fields containing ',', '"' or a newline are quoted.
std::string write_csv(const CsvRow& header, const std::vector<CsvRow>& rows);

// Six significant digits, '.' decimal separator regardless of locale.
std::string format_float(double value);

}  // namespace ordirank
