#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvl {

// RFC-4180-style quoting: fields containing comma, quote, CR or LF are
// quoted, with embedded quotes doubled.
std::string csv_escape(const std::string& field);

void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

// Round-trip-exact double formatting (%.17g).
std::string fmt_double(double v);

}  // namespace kvl
