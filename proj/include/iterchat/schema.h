#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iterchat/error.h"
#include "iterchat/json.h"

namespace iterchat {

class Backend;
struct PromptTemplates;

struct SlotDefinition {
  std::string name;
  std::string description;
  bool multi_valued = false;
  std::vector<std::string> schema_values;
  bool allow_free_values = false;

  // Index into schema_values of the value equal to `value` under
  // normalize(), if any.
  std::optional<std::size_t> find_value(std::string_view value) const;

  friend bool operator==(const SlotDefinition&, const SlotDefinition&) = default;
};

// The slot universe of one task domain. Construct through parse_schema /
// schema_from_json so the invariants hold; instances are immutable after
// that and can be shared across threads.
struct PreferenceSchema {
  std::string domain_name;
  std::string version;
  std::vector<SlotDefinition> slots;

  const SlotDefinition* find_slot(std::string_view name) const;

  friend bool operator==(const PreferenceSchema&, const PreferenceSchema&) = default;
};

// Throws SchemaError naming the offending slot: empty slot list, duplicate
// slot name, blank name, closed slot without values, duplicate values.
void check_schema(const PreferenceSchema& schema);

PreferenceSchema schema_from_json(const Json& json);
Json schema_to_json(const PreferenceSchema& schema);

PreferenceSchema parse_schema(std::string_view document);
std::string serialize_schema(const PreferenceSchema& schema);

PreferenceSchema load_schema(const std::string& path);

struct ValidityReport {
  bool valid = true;
  std::vector<std::string> reasons;
};

// Whether assigning `values` to `slot` is legal under the schema. An empty
// value list is always legal for a known slot.
ValidityReport validate_assignment(const PreferenceSchema& schema, std::string_view slot,
                                   const std::vector<std::string>& values);

// One line per slot, "- name (description) [single|multi]: v1 | v2 | ...",
// for prompts.
std::string render_schema_slots(const PreferenceSchema& schema);

class SchemaDraftError : public SchemaError {
 public:
  SchemaDraftError(const std::string& what, std::string raw_reply)
      : SchemaError(what), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const { return raw_reply_; }

 private:
  std::string raw_reply_;
};

// Asks the backend for a schema covering `domain_description`, keeps the
// first `max_slots` slots and re-validates the result. Slots that come
// back closed but without candidate values get a second, per-slot call
// asking only for values.
PreferenceSchema draft_schema(std::string_view domain_description, Backend& backend,
                              std::size_t max_slots, const PromptTemplates& prompts);

}  // namespace iterchat
