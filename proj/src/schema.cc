#include "iterchat/schema.h"

#include <set>

#include "iterchat/backend.h"
#include "iterchat/io.h"
#include "iterchat/prompts.h"
#include "iterchat/text.h"

namespace iterchat {
namespace {

std::string slot_label(const SlotDefinition& slot, std::size_t index) {
  if (trim(slot.name).empty()) return "slot #" + std::to_string(index + 1);
  return "slot '" + slot.name + "'";
}

const Json& member(const Json& object, const char* key, const std::string& where) {
  auto it = object.find(key);
  if (it == object.end()) throw SchemaError("malformed document: " + where + " is missing '" + key + "'");
  return *it;
}

std::string string_member(const Json& object, const char* key, const std::string& where) {
  const Json& v = member(object, key, where);
  if (!v.is_string()) throw SchemaError("malformed document: " + where + " '" + key + "' must be a string");
  return v.get<std::string>();
}

bool bool_member(const Json& object, const char* key, const std::string& where, bool fallback) {
  auto it = object.find(key);
  if (it == object.end()) return fallback;
  if (!it->is_boolean()) throw SchemaError("malformed document: " + where + " '" + key + "' must be a boolean");
  return it->get<bool>();
}

std::vector<std::string> string_list(const Json& object, const char* key, const std::string& where) {
  auto it = object.find(key);
  if (it == object.end()) return {};
  if (!it->is_array()) throw SchemaError("malformed document: " + where + " '" + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw SchemaError("malformed document: " + where + " '" + key + "' holds a non-string");
    out.push_back(v.get<std::string>());
  }
  return out;
}

SlotDefinition slot_from_json(const Json& json, std::size_t index) {
  std::string where = "slot #" + std::to_string(index + 1);
  if (!json.is_object()) throw SchemaError("malformed document: " + where + " is not an object");
  SlotDefinition slot;
  slot.name = string_member(json, "name", where);
  if (!trim(slot.name).empty()) where = "slot '" + slot.name + "'";
  if (json.contains("description")) slot.description = string_member(json, "description", where);
  slot.multi_valued = bool_member(json, "multi_valued", where, false);
  slot.allow_free_values = bool_member(json, "allow_free_values", where, false);
  slot.schema_values = string_list(json, "schema_values", where);
  return slot;
}

}  // namespace

std::optional<std::size_t> SlotDefinition::find_value(std::string_view value) const {
  const std::string key = normalize(value);
  for (std::size_t i = 0; i < schema_values.size(); ++i) {
    if (normalize(schema_values[i]) == key) return i;
  }
  return std::nullopt;
}

const SlotDefinition* PreferenceSchema::find_slot(std::string_view name) const {
  const std::string key = normalize(name);
  for (const auto& slot : slots) {
    if (normalize(slot.name) == key) return &slot;
  }
  return nullptr;
}

void check_schema(const PreferenceSchema& schema) {
  if (schema.slots.empty()) throw SchemaError("empty slot list");
  std::set<std::string> names;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    const SlotDefinition& slot = schema.slots[i];
    const std::string label = slot_label(slot, i);
    const std::string key = normalize(slot.name);
    if (key.empty()) throw SchemaError(label + ": blank slot name");
    if (!names.insert(key).second) throw SchemaError("duplicate slot name '" + slot.name + "'");
    if (!slot.allow_free_values && slot.schema_values.empty()) {
      throw SchemaError(label + ": closed slot has no schema_values");
    }
    std::set<std::string> values;
    for (const auto& v : slot.schema_values) {
      const std::string vk = normalize(v);
      if (vk.empty()) throw SchemaError(label + ": blank schema value");
      if (!values.insert(vk).second) {
        throw SchemaError(label + ": duplicate schema value '" + v + "'");
      }
    }
  }
}

PreferenceSchema schema_from_json(const Json& json) {
  if (!json.is_object()) throw SchemaError("malformed document: schema must be a JSON object");
  PreferenceSchema schema;
  schema.domain_name = json.contains("domain_name") ? string_member(json, "domain_name", "schema") : "";
  schema.version = json.contains("version") ? string_member(json, "version", "schema") : "";
  const Json& slots = member(json, "slots", "schema");
  if (!slots.is_array()) throw SchemaError("malformed document: 'slots' must be an array");
  for (std::size_t i = 0; i < slots.size(); ++i) schema.slots.push_back(slot_from_json(slots[i], i));
  check_schema(schema);
  return schema;
}

Json schema_to_json(const PreferenceSchema& schema) {
  Json slots = Json::array();
  for (const auto& s : schema.slots) {
    slots.push_back(Json{{"name", s.name},
                         {"description", s.description},
                         {"multi_valued", s.multi_valued},
                         {"allow_free_values", s.allow_free_values},
                         {"schema_values", s.schema_values}});
  }
  return Json{{"domain_name", schema.domain_name}, {"version", schema.version}, {"slots", slots}};
}

PreferenceSchema parse_schema(std::string_view document) {
  Json json = Json::parse(document, nullptr, false);
  if (json.is_discarded()) throw SchemaError("malformed document: not valid JSON");
  return schema_from_json(json);
}

std::string serialize_schema(const PreferenceSchema& schema) {
  return schema_to_json(schema).dump(2) + "\n";
}

PreferenceSchema load_schema(const std::string& path) {
  try {
    return parse_schema(read_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

ValidityReport validate_assignment(const PreferenceSchema& schema, std::string_view slot,
                                   const std::vector<std::string>& values) {
  ValidityReport report;
  const SlotDefinition* def = schema.find_slot(slot);
  if (def == nullptr) {
    report.valid = false;
    report.reasons.push_back("unknown slot");
    return report;
  }
  if (!def->allow_free_values) {
    for (const auto& v : values) {
      if (!def->find_value(v)) {
        report.valid = false;
        report.reasons.push_back("value '" + v + "' not in schema_values of '" + def->name + "'");
      }
    }
  }
  if (!def->multi_valued) {
    std::set<std::string> distinct;
    for (const auto& v : values) distinct.insert(normalize(v));
    if (distinct.size() > 1) {
      report.valid = false;
      report.reasons.push_back("slot '" + def->name + "' is single-valued but " +
                               std::to_string(distinct.size()) + " values given");
    }
  }
  return report;
}

std::string render_schema_slots(const PreferenceSchema& schema) {
  std::string out;
  for (const auto& slot : schema.slots) {
    out += "- " + slot.name;
    if (!slot.description.empty()) out += " (" + slot.description + ")";
    out += slot.multi_valued ? " [multi]" : " [single]";
    out += ": ";
    for (std::size_t i = 0; i < slot.schema_values.size(); ++i) {
      if (i > 0) out += " | ";
      out += slot.schema_values[i];
    }
    if (slot.allow_free_values) out += slot.schema_values.empty() ? "any value" : " | other values allowed";
    out += "\n";
  }
  return out;
}

namespace {

std::string ask(Backend& backend, std::vector<ChatMessage> messages, const Json& directive) {
  if (backend.accepts_directives()) attach_directive(messages, directive);
  return backend.complete(messages);
}

}  // namespace

PreferenceSchema draft_schema(std::string_view domain_description, Backend& backend,
                              std::size_t max_slots, const PromptTemplates& prompts) {
  if (max_slots < 1) throw SchemaError("max_slots must be at least 1");
  const std::string domain(domain_description);
  const std::map<std::string, std::string> vars{{"domain", domain},
                                                {"max_slots", std::to_string(max_slots)}};
  std::vector<ChatMessage> messages{
      {Role::kSystem, render_template(prompts.draft_system, vars)},
      {Role::kUser, render_template(prompts.draft_user, vars)}};
  const std::string reply =
      ask(backend, std::move(messages),
          Json{{"kind", "draft"}, {"domain", domain}, {"max_slots", max_slots}});

  auto json = extract_first_json_object(reply);
  if (!json || !json->contains("slots") || !(*json)["slots"].is_array()) {
    throw SchemaDraftError("backend reply is not a schema document", reply);
  }
  // Insert before taking references: ordered_json keys live in a vector.
  if (!json->contains("domain_name")) (*json)["domain_name"] = domain;
  if (!json->contains("version")) (*json)["version"] = "draft-1";
  Json& slots = (*json)["slots"];
  if (slots.size() > max_slots) slots.erase(slots.begin() + static_cast<long>(max_slots), slots.end());

  // Second pass for slots that came back closed but without values.
  for (auto& slot : slots) {
    if (!slot.is_object() || !slot.contains("name") || !slot["name"].is_string()) continue;
    const bool free = slot.contains("allow_free_values") && slot["allow_free_values"].is_boolean() &&
                      slot["allow_free_values"].get<bool>();
    const bool has_values = slot.contains("schema_values") && slot["schema_values"].is_array() &&
                            !slot["schema_values"].empty();
    if (free || has_values) continue;
    const std::string name = slot["name"].get<std::string>();
    std::map<std::string, std::string> slot_vars = vars;
    slot_vars["slot"] = name;
    slot_vars["description"] =
        slot.contains("description") && slot["description"].is_string() ? slot["description"].get<std::string>() : "";
    std::vector<ChatMessage> follow_up{
        {Role::kSystem, render_template(prompts.draft_system, vars)},
        {Role::kUser, render_template(prompts.draft_values_user, slot_vars)}};
    const std::string values_reply = ask(
        backend, std::move(follow_up),
        Json{{"kind", "draft_values"}, {"domain", domain}, {"slot", name}});
    auto values = extract_first_json_object(values_reply);
    if (values && values->contains("schema_values") && (*values)["schema_values"].is_array()) {
      slot["schema_values"] = (*values)["schema_values"];
    }
  }

  try {
    return schema_from_json(*json);
  } catch (const SchemaError& e) {
    throw SchemaDraftError(std::string("drafted schema is invalid: ") + e.what(), reply);
  }
}

}  // namespace iterchat
