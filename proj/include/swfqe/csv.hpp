#pragma once

#include <optional>
#include <string>
#include <vector>

namespace swfqe::csv {

/// printf %.17g
std::string format_real(double value);

std::string format_optional(const std::optional<double>& value);

std::vector<std::string> split(const std::string& line, char sep = ',');

double parse_real(const std::string& field);

}  // namespace swfqe::csv
