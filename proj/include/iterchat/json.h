#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace iterchat {

// Insertion-ordered so serialized records keep their documented key order.
using Json = nlohmann::ordered_json;

// Returns the first balanced JSON object embedded in free text (model
// replies often wrap JSON in prose or code fences). Braces inside string
// literals are skipped. Candidates that fail to parse are passed over.
std::optional<Json> extract_first_json_object(std::string_view text);

}  // namespace iterchat
