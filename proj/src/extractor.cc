#include "iterchat/extractor.h"

#include <map>
#include <memory>

#include "iterchat/io.h"
#include "iterchat/prompts.h"
#include "iterchat/schema.h"
#include "iterchat/text.h"

namespace iterchat {

std::string_view to_string(PromptMode mode) {
  return mode == PromptMode::kIterChat ? "iterchat" : "multi-turn";
}

std::optional<PromptMode> parse_prompt_mode(std::string_view text) {
  if (text == "iterchat") return PromptMode::kIterChat;
  if (text == "multi-turn" || text == "multi_turn") return PromptMode::kMultiTurn;
  return std::nullopt;
}

std::string_view to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::kOk: return "ok";
    case ParseStatus::kRepaired: return "repaired";
    case ParseStatus::kFailed: return "failed";
  }
  return "failed";
}

std::optional<ParseStatus> parse_parse_status(std::string_view text) {
  if (text == "ok") return ParseStatus::kOk;
  if (text == "repaired") return ParseStatus::kRepaired;
  if (text == "failed") return ParseStatus::kFailed;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

void render_turn(std::string& out, std::string_view system, std::string_view user) {
  out += kSystemLine;
  out += system;
  out += '\n';
  out += kUserLine;
  out += user;
  out += '\n';
}

Json labels_json(const StateGain& gain, const PreferenceState& extraction) {
  return Json{{"state_gain", gain_to_json(gain)},
              {"preference_extraction", state_to_json(extraction)}};
}

}  // namespace

std::string render_iterchat_input(const IterChatRecord& record) {
  std::string out;
  out += kHistoryHeader;
  out += '\n';
  out += state_to_json(record.history_preference).dump();
  out += "\n\nMost Recent One-Turn Dialogue:\n";
  render_turn(out, record.system_utterance, record.user_utterance);
  return out;
}

std::string render_multi_turn_input(const MultiTurnDialogue& dialogue) {
  std::string out = "Dialogue:\n";
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    out += "Turn " + std::to_string(t + 1) + "\n";
    render_turn(out, dialogue.turns[t].system_utterance, dialogue.turns[t].user_utterance);
  }
  return out;
}

DemoExample make_demo(const IterChatRecord& record) {
  if (!record.labeled()) throw FormatError("demo record '" + record.record_id + "' is unlabeled");
  return {render_iterchat_input(record),
          labels_json(*record.state_gain, *record.preference_extraction).dump()};
}

DemoExample make_demo(const MultiTurnDialogue& dialogue) {
  if (!dialogue.labeled()) {
    throw FormatError("demo dialogue '" + dialogue.dialogue_id + "' is unlabeled");
  }
  const PreferenceState& final_state = *dialogue.turns.back().gold_state;
  return {render_multi_turn_input(dialogue),
          Json{{"preference_extraction", state_to_json(final_state)}}.dump()};
}

std::vector<DemoExample> load_demos(const std::string& path, PromptMode mode, std::size_t k) {
  std::vector<DemoExample> demos;
  if (k == 0) return demos;
  if (mode == PromptMode::kIterChat) {
    for (const auto& r : load_records(path)) {
      if (!r.labeled()) continue;
      demos.push_back(make_demo(r));
      if (demos.size() == k) break;
    }
  } else {
    for (const auto& d : load_dialogues(path)) {
      if (!d.labeled()) continue;
      demos.push_back(make_demo(d));
      if (demos.size() == k) break;
    }
  }
  if (demos.size() < k) {
    throw FormatError(path + ": " + std::to_string(k) + " demos requested but only " +
                      std::to_string(demos.size()) + " labeled entries found");
  }
  return demos;
}

std::vector<ChatMessage> build_prompt(PromptMode mode, const PreferenceSchema& schema,
                                      const std::vector<DemoExample>& demos,
                                      const PromptInput& input, const PromptTemplates& prompts) {
  const bool is_record = std::holds_alternative<IterChatRecord>(input);
  if ((mode == PromptMode::kIterChat) != is_record) {
    throw Error(std::string(to_string(mode)) + " mode needs " +
                (mode == PromptMode::kIterChat ? "an IterChat record" : "a multi-turn dialogue"));
  }
  const std::map<std::string, std::string> vars{{"domain", schema.domain_name},
                                                {"schema_slots", render_schema_slots(schema)}};
  const std::string& system_template =
      mode == PromptMode::kIterChat ? prompts.iterchat_system : prompts.multi_turn_system;

  std::string user;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    user += kDemoHeader;
    user += std::to_string(i + 1);
    user += '\n';
    user += demos[i].input;
    user += kOutputHeader;
    user += '\n';
    user += demos[i].output;
    user += "\n\n";
  }
  user += kInputHeader;
  user += '\n';
  user += is_record ? render_iterchat_input(std::get<IterChatRecord>(input))
                    : render_multi_turn_input(std::get<MultiTurnDialogue>(input));
  user += kOutputHeader;
  user += '\n';
  return {{Role::kSystem, render_template(system_template, vars)}, {Role::kUser, user}};
}

// ---------------------------------------------------------------------------
// Output parsing

namespace {

std::vector<std::string> tolerant_values(const Json& v, bool& repaired) {
  std::vector<std::string> out;
  if (v.is_string()) {
    repaired = true;
    if (!trim(v.get<std::string>()).empty()) out.push_back(v.get<std::string>());
    return out;
  }
  if (!v.is_array()) {
    repaired = true;
    return out;
  }
  for (const Json& item : v) {
    if (item.is_string() && !trim(item.get<std::string>()).empty()) {
      out.push_back(item.get<std::string>());
    } else {
      repaired = true;
    }
  }
  return out;
}

std::optional<PreferenceState> tolerant_state(const Json& json, bool& repaired) {
  if (!json.is_object()) return std::nullopt;
  PreferenceState state;
  for (const auto& [slot, values] : json.items()) {
    if (trim(slot).empty()) {
      repaired = true;
      continue;
    }
    auto list = tolerant_values(values, repaired);
    if (!list.empty()) state.add(slot, list);
  }
  return state;
}

std::optional<StateGain> tolerant_gain(const Json& json, bool& repaired) {
  if (!json.is_array()) return std::nullopt;
  StateGain gain;
  for (const Json& item : json) {
    if (!item.is_object() || !item.contains("op") || !item["op"].is_string() ||
        !item.contains("slot") || !item["slot"].is_string()) {
      repaired = true;
      continue;
    }
    auto kind = parse_gain_kind(normalize(item["op"].get<std::string>()));
    if (!kind) {
      repaired = true;
      continue;
    }
    GainOp op{*kind, item["slot"].get<std::string>(), {}};
    if (item.contains("values")) op.values = tolerant_values(item["values"], repaired);
    if (trim(op.slot).empty() || !op.well_formed()) {
      repaired = true;
      continue;
    }
    gain.ops.push_back(std::move(op));
  }
  return gain;
}

std::vector<std::string> schema_warnings(const PreferenceSchema& schema,
                                         const PreferenceState& state) {
  std::vector<std::string> out;
  for (const auto& [key, slot] : state.slots()) {
    const ValidityReport report = validate_assignment(schema, slot.name, slot.values);
    for (const auto& reason : report.reasons) out.push_back(slot.name + ": " + reason);
  }
  return out;
}

}  // namespace

ExtractionResult parse_extraction_output(std::string_view raw, const PreferenceSchema& schema,
                                         const PreferenceState& history) {
  ExtractionResult result;
  result.raw_output = std::string(raw);
  result.preference_extraction = history;

  const auto json = extract_first_json_object(raw);
  if (!json) return result;

  bool repaired = false;
  std::optional<StateGain> gain;
  std::optional<PreferenceState> extraction;
  if (auto it = json->find("state_gain"); it != json->end()) gain = tolerant_gain(*it, repaired);
  if (auto it = json->find("preference_extraction"); it != json->end()) {
    extraction = tolerant_state(*it, repaired);
  }
  if (!gain && !extraction) return result;

  if (gain) {
    // The gain is primary: the extraction is history combined with it.
    const PreferenceState derived = apply_gain(history, *gain, ApplyMode::kLenient);
    if (!extraction || !states_equal(*extraction, derived)) repaired = true;
    result.state_gain = std::move(*gain);
    result.preference_extraction = derived;
  } else {
    repaired = true;
    result.state_gain = diff_states(history, *extraction);
    result.preference_extraction = std::move(*extraction);
  }
  result.parse_status = repaired ? ParseStatus::kRepaired : ParseStatus::kOk;
  result.schema_warnings = schema_warnings(schema, result.preference_extraction);
  return result;
}

ExtractionResult parse_final_state_output(std::string_view raw, const PreferenceSchema& schema) {
  ExtractionResult result;
  result.raw_output = std::string(raw);
  const auto json = extract_first_json_object(raw);
  if (!json) return result;
  auto it = json->find("preference_extraction");
  if (it == json->end()) return result;
  bool repaired = false;
  auto state = tolerant_state(*it, repaired);
  if (!state) return result;
  result.preference_extraction = std::move(*state);
  result.state_gain = diff_states(PreferenceState{}, result.preference_extraction);
  result.parse_status = repaired ? ParseStatus::kRepaired : ParseStatus::kOk;
  result.schema_warnings = schema_warnings(schema, result.preference_extraction);
  return result;
}

// ---------------------------------------------------------------------------
// Extraction loops

namespace {

std::string complete_with_context(Backend& backend, const std::vector<ChatMessage>& messages,
                                  const std::string& what) {
  try {
    return backend.complete(messages);
  } catch (const BackendError& e) {
    throw BackendError(e.kind(), what + ": " + e.what(), e.status(), e.attempts());
  }
}

}  // namespace

ExtractionResult extract_turn(const IterChatRecord& record, const ExtractorContext& context,
                              const DirectiveSource& directive) {
  const IterChatRecord input = record.unlabeled();
  auto messages = build_prompt(PromptMode::kIterChat, context.schema, context.demos, input,
                               context.prompts);
  if (directive && context.backend.accepts_directives()) {
    if (auto d = directive(input)) attach_directive(messages, *d);
  }
  const std::string raw =
      complete_with_context(context.backend, messages, "record '" + record.record_id + "'");
  return parse_extraction_output(raw, context.schema, record.history_preference);
}

std::vector<PreferenceState> Trajectory::states() const {
  std::vector<PreferenceState> out;
  out.reserve(turns.size());
  for (const auto& t : turns) out.push_back(t.preference_extraction);
  return out;
}

Trajectory extract_dialogue_iterative(const MultiTurnDialogue& dialogue,
                                      const ExtractorContext& context,
                                      const DirectiveSource& directive) {
  if (dialogue.turns.empty()) throw Error("dialogue '" + dialogue.dialogue_id + "' has no turns");
  Trajectory trajectory;
  PreferenceState carried;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    IterChatRecord record;
    record.record_id = turn_record_id(dialogue.dialogue_id, t);
    record.source_dialogue_id = dialogue.dialogue_id;
    record.turn_index = t;
    record.history_preference = carried;
    record.system_utterance = dialogue.turns[i].system_utterance;
    record.user_utterance = dialogue.turns[i].user_utterance;
    try {
      trajectory.turns.push_back(extract_turn(record, context, directive));
    } catch (const Error& e) {
      throw ExtractionError(e.what(), trajectory.states());
    }
    carried = trajectory.turns.back().preference_extraction;
  }
  return trajectory;
}

ExtractionResult extract_dialogue_multi_turn(const MultiTurnDialogue& dialogue,
                                             const ExtractorContext& context,
                                             const std::optional<Json>& directive) {
  if (dialogue.turns.empty()) throw Error("dialogue '" + dialogue.dialogue_id + "' has no turns");
  auto messages = build_prompt(PromptMode::kMultiTurn, context.schema, context.demos, dialogue,
                               context.prompts);
  if (directive && context.backend.accepts_directives()) attach_directive(messages, *directive);
  const std::string raw =
      complete_with_context(context.backend, messages, "dialogue '" + dialogue.dialogue_id + "'");
  return parse_final_state_output(raw, context.schema);
}

Json extraction_directive(const StateGain& gain, const PreferenceState& extraction) {
  return Json{{"kind", "extract"},
              {"state_gain", gain_to_json(gain)},
              {"preference_extraction", state_to_json(extraction)}};
}

DirectiveSource gold_record_directives(const std::vector<IterChatRecord>& gold) {
  auto table = std::make_shared<std::map<std::string, Json>>();
  for (const auto& r : gold) {
    if (r.labeled()) (*table)[r.record_id] = extraction_directive(*r.state_gain, *r.preference_extraction);
  }
  return [table](const IterChatRecord& record) -> std::optional<Json> {
    auto it = table->find(record.record_id);
    if (it == table->end()) return std::nullopt;
    return it->second;
  };
}

DirectiveSource gold_dialogue_directives(const MultiTurnDialogue& gold) {
  return gold_record_directives(explode(gold));
}

}  // namespace iterchat
