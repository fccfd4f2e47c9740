#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace iterchat {

// Canonical value form used for every equality test on slot names and
// values: Unicode White_Space trimmed from both ends, then lower-cased
// code point by code point. Original strings are kept for display.
std::string normalize(std::string_view text);

// Unicode-aware trim only (no case change).
std::string trim(std::string_view text);

// Lower-cases a UTF-8 string using the C.UTF-8 ctype tables. Invalid
// UTF-8 bytes are copied through unchanged.
std::string case_fold(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace iterchat
