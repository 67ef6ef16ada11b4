#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tvsurv::csv {

/// Splits one RFC 4180 record. Quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_record(std::string_view line);

/// Reads the next non-empty line; strips a trailing CR. False at end of stream.
bool read_line(std::istream& in, std::string& line);

/// Shortest representation that round-trips to the same double.
std::string format_double(double value);

/// Quotes a field when it contains a comma, quote, or newline.
std::string escape(std::string_view field);

/// Parses a whole-string double; false if any character is left over.
bool parse_double(std::string_view text, double& out);

}  // namespace tvsurv::csv
