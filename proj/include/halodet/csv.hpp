#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace halodet::csv {

// RFC 4180: fields containing a comma, quote, CR or LF are quoted and inner
// quotes doubled.
std::string quote(std::string_view field);

std::string join_row(const std::vector<std::string>& fields);

// Parses a whole document. Accepts LF or CRLF line endings; a trailing line
// break does not produce an empty row. Throws Error(InvalidArgument) on an
// unterminated quoted field.
std::vector<std::vector<std::string>> parse(std::string_view text);

// printf("%.*g") with the given number of significant digits.
std::string format_number(double value, int significant_digits = 9);

double parse_number(const std::string& field);

}  // namespace halodet::csv
