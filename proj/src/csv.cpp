#include "swfqe/csv.hpp"

#include "swfqe/core.hpp"

#include <cstdio>
#include <cstdlib>

namespace swfqe::csv {

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string format_optional(const std::optional<double>& value) { return value ? format_real(*value) : std::string(); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == sep) {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

double parse_real(const std::string& field) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size()) throw DataError("not a number: '" + field + "'");
  return v;
}

}  // namespace swfqe::csv
