#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iterchat/json.h"

namespace iterchat {

std::string read_file(const std::string& path);

// Writes to a sibling temporary file and renames it over `path`, so a
// reader never observes a truncated file.
void write_file_atomic(const std::string& path, std::string_view contents);

// One JSON value per non-blank line. Errors carry the 1-based line number.
std::vector<Json> parse_jsonl(std::string_view text);
std::string to_jsonl(const std::vector<Json>& values);

}  // namespace iterchat
