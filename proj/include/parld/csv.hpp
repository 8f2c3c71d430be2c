#pragma once

#include <string>
#include <vector>

namespace parld {

// RFC 4180 CSV: quoted fields, doubled quotes, newlines inside quotes.
// Returns rows of cells; empty trailing line is ignored.
std::vector<std::vector<std::string>> parse_csv(const std::string& content);

}  // namespace parld
