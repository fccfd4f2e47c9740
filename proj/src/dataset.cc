#include "iterchat/dataset.h"

#include <algorithm>
#include <set>

#include "iterchat/io.h"
#include "iterchat/schema.h"
#include "iterchat/text.h"

namespace iterchat {

bool MultiTurnDialogue::labeled() const {
  return !turns.empty() &&
         std::all_of(turns.begin(), turns.end(), [](const DialogueTurn& t) { return t.gold_state.has_value(); });
}

IterChatRecord IterChatRecord::unlabeled() const {
  IterChatRecord copy = *this;
  copy.state_gain.reset();
  copy.preference_extraction.reset();
  return copy;
}

void check_dialogue(const MultiTurnDialogue& dialogue) {
  const std::string where = "dialogue '" + dialogue.dialogue_id + "'";
  if (dialogue.turns.empty()) throw FormatError(where + " has no turns");
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    if (trim(dialogue.turns[i].user_utterance).empty()) {
      throw FormatError(where + " turn " + std::to_string(i + 1) + ": empty user utterance");
    }
    if (dialogue.turns[i].gold_state) ++labeled;
  }
  if (labeled != 0 && labeled != dialogue.turns.size()) {
    throw FormatError(where + " is partially labeled");
  }
}

bool record_consistent(const IterChatRecord& record, ApplyMode mode) {
  if (!record.labeled()) return false;
  try {
    return apply_gain(record.history_preference, *record.state_gain, mode) ==
           *record.preference_extraction;
  } catch (const GainError&) {
    return false;
  }
}

std::string turn_record_id(std::string_view dialogue_id, int turn_index) {
  return std::string(dialogue_id) + ":" + std::to_string(turn_index);
}

std::vector<IterChatRecord> explode(const MultiTurnDialogue& dialogue) {
  check_dialogue(dialogue);
  if (!dialogue.labeled()) throw FormatError("cannot explode unlabeled dialogue");
  std::vector<IterChatRecord> records;
  records.reserve(dialogue.turns.size());
  PreferenceState previous;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const DialogueTurn& turn = dialogue.turns[i];
    const int index = static_cast<int>(i) + 1;
    IterChatRecord r;
    r.record_id = turn_record_id(dialogue.dialogue_id, index);
    r.source_dialogue_id = dialogue.dialogue_id;
    r.turn_index = index;
    r.history_preference = previous;
    r.system_utterance = turn.system_utterance;
    r.user_utterance = turn.user_utterance;
    r.state_gain = diff_states(previous, *turn.gold_state);
    r.preference_extraction = *turn.gold_state;
    previous = *turn.gold_state;
    records.push_back(std::move(r));
  }
  return records;
}

PreferenceState replay(const std::vector<IterChatRecord>& records) {
  PreferenceState state;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const IterChatRecord& r = records[i];
    const int expected = static_cast<int>(i) + 1;
    const int index = r.turn_index.value_or(expected);
    if (index != expected) throw FormatError("gap at turn " + std::to_string(expected));
    if (i > 0 && r.source_dialogue_id != records.front().source_dialogue_id) {
      throw FormatError("record '" + r.record_id + "' belongs to another dialogue");
    }
    if (!r.state_gain) throw FormatError("record '" + r.record_id + "' has no state_gain");
    if (!(r.history_preference == state)) {
      throw FormatError("history mismatch at turn " + std::to_string(expected));
    }
    try {
      state = apply_gain(state, *r.state_gain, ApplyMode::kStrict);
    } catch (const GainError& e) {
      throw FormatError("turn " + std::to_string(expected) + ": " + e.what());
    }
    if (r.preference_extraction && !(*r.preference_extraction == state)) {
      throw FormatError("extraction mismatch at turn " + std::to_string(expected));
    }
  }
  return state;
}

SlotMapping SlotMapping::from_json(const Json& json) {
  if (!json.is_object()) throw FormatError("slot mapping must be a JSON object");
  SlotMapping mapping;
  for (const auto& [key, target] : json.items()) {
    if (!target.is_string() || trim(target.get<std::string>()).empty()) {
      throw FormatError("slot mapping for '" + key + "' must be a slot name or \"drop\"");
    }
    mapping.entries[key] = target.get<std::string>();
  }
  return mapping;
}

namespace {

bool unset_value(const std::string& normalized) {
  return normalized.empty() || normalized == "none" || normalized == "not mentioned";
}

struct TurnAnnotation {
  std::string system;
  std::string user;
  std::vector<std::pair<std::string, std::string>> slots;  // external key, raw value
};

struct RawDialogue {
  std::string id;
  std::vector<TurnAnnotation> turns;
};

std::string string_or_empty(const Json& obj, const char* key) {
  auto it = obj.find(key);
  return it != obj.end() && it->is_string() ? it->get<std::string>() : std::string();
}

// [{"dialogue_idx", "dialogue": [{"system_transcript", "transcript", "belief_state"}]}]
std::vector<RawDialogue> read_turn_list(const Json& root) {
  std::vector<RawDialogue> out;
  for (const Json& d : root) {
    if (!d.is_object() || !d.contains("dialogue") || !d["dialogue"].is_array()) {
      throw FormatError("dialogue entry without a \"dialogue\" turn list");
    }
    RawDialogue raw;
    raw.id = d.contains("dialogue_idx") ? (d["dialogue_idx"].is_string() ? d["dialogue_idx"].get<std::string>()
                                                                          : d["dialogue_idx"].dump())
                                        : "dialogue-" + std::to_string(out.size() + 1);
    for (const Json& t : d["dialogue"]) {
      TurnAnnotation turn;
      turn.system = string_or_empty(t, "system_transcript");
      turn.user = string_or_empty(t, "transcript");
      if (t.contains("belief_state") && t["belief_state"].is_array()) {
        for (const Json& bs : t["belief_state"]) {
          if (!bs.contains("slots") || !bs["slots"].is_array()) continue;
          for (const Json& pair : bs["slots"]) {
            if (pair.is_array() && pair.size() == 2 && pair[0].is_string() && pair[1].is_string()) {
              turn.slots.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
            }
          }
        }
      }
      raw.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(raw));
  }
  return out;
}

// {id: {"log": [{"text", "metadata": {domain: {"semi": {...}, "book": {...}}}}]}}
// Even log entries are user turns; the belief state after user turn i is
// the metadata of entry i + 1.
std::vector<RawDialogue> read_log_layout(const Json& root) {
  std::vector<RawDialogue> out;
  for (const auto& [id, d] : root.items()) {
    if (!d.is_object() || !d.contains("log") || !d["log"].is_array()) {
      throw FormatError("dialogue '" + id + "' has no \"log\" array");
    }
    const Json& log = d["log"];
    RawDialogue raw;
    raw.id = id;
    for (std::size_t i = 0; i < log.size(); i += 2) {
      TurnAnnotation turn;
      turn.user = string_or_empty(log[i], "text");
      if (i > 0) turn.system = string_or_empty(log[i - 1], "text");
      if (i + 1 < log.size() && log[i + 1].contains("metadata") && log[i + 1]["metadata"].is_object()) {
        for (const auto& [domain, parts] : log[i + 1]["metadata"].items()) {
          for (const char* part : {"semi", "book"}) {
            if (!parts.contains(part) || !parts[part].is_object()) continue;
            for (const auto& [slot, value] : parts[part].items()) {
              if (slot == "booked" || !value.is_string()) continue;
              const std::string key = std::string(part) == "book" ? domain + "-book " + slot : domain + "-" + slot;
              turn.slots.emplace_back(key, value.get<std::string>());
            }
          }
        }
      }
      raw.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace

IngestResult ingest_external(std::string_view raw, const SlotMapping& mapping,
                             const PreferenceSchema* schema, std::string_view domain_name) {
  if (schema != nullptr) {
    for (const auto& [external, internal] : mapping.entries) {
      if (internal != SlotMapping::kDrop && schema->find_slot(internal) == nullptr) {
        throw FormatError("mapping for '" + external + "' names unknown slot '" + internal + "'");
      }
    }
  }
  Json root = Json::parse(raw, nullptr, false);
  if (root.is_discarded()) throw FormatError("external dataset is not valid JSON");

  std::vector<RawDialogue> dialogues;
  if (root.is_array()) {
    dialogues = read_turn_list(root);
  } else if (root.is_object()) {
    dialogues = read_log_layout(root);
  } else {
    throw FormatError("external dataset must be a JSON array or object");
  }

  IngestResult result;
  for (const RawDialogue& rd : dialogues) {
    MultiTurnDialogue dialogue;
    dialogue.dialogue_id = rd.id;
    dialogue.domain_name = std::string(domain_name);
    std::set<std::string> warned;
    for (const TurnAnnotation& t : rd.turns) {
      PreferenceState state;
      for (const auto& [key, value] : t.slots) {
        auto it = mapping.entries.find(key);
        if (it == mapping.entries.end() || it->second == SlotMapping::kDrop) {
          if (warned.insert(key).second) {
            ++result.warning_count;
            ++result.dropped_keys[key];
          }
          continue;
        }
        const std::string v = normalize(value);
        if (unset_value(v)) continue;
        state.add(it->second, v);
      }
      dialogue.turns.push_back({t.system, t.user, std::move(state)});
    }
    if (dialogue.turns.empty()) continue;
    check_dialogue(dialogue);
    result.dialogues.push_back(std::move(dialogue));
  }
  return result;
}

Json record_to_json(const IterChatRecord& r) {
  Json out;
  out["record_id"] = r.record_id;
  out["source_dialogue_id"] = r.source_dialogue_id ? Json(*r.source_dialogue_id) : Json(nullptr);
  out["turn_index"] = r.turn_index ? Json(*r.turn_index) : Json(nullptr);
  out["history_preference"] = state_to_json(r.history_preference);
  out["system_utterance"] = r.system_utterance;
  out["user_utterance"] = r.user_utterance;
  out["state_gain"] = r.state_gain ? gain_to_json(*r.state_gain) : Json(nullptr);
  out["preference_extraction"] =
      r.preference_extraction ? state_to_json(*r.preference_extraction) : Json(nullptr);
  return out;
}

namespace {

std::string required_string(const Json& json, const char* key, const std::string& where) {
  auto it = json.find(key);
  if (it == json.end() || !it->is_string()) {
    throw FormatError(where + ": '" + key + "' must be a string");
  }
  return it->get<std::string>();
}

bool present(const Json& json, const char* key) {
  auto it = json.find(key);
  return it != json.end() && !it->is_null();
}

}  // namespace

IterChatRecord record_from_json(const Json& json) {
  if (!json.is_object()) throw FormatError("record must be a JSON object");
  IterChatRecord r;
  r.record_id = required_string(json, "record_id", "record");
  const std::string where = "record '" + r.record_id + "'";
  try {
    if (present(json, "source_dialogue_id")) r.source_dialogue_id = required_string(json, "source_dialogue_id", where);
    if (present(json, "turn_index")) {
      if (!json["turn_index"].is_number_integer() || json["turn_index"].get<int>() < 1) {
        throw FormatError("'turn_index' must be a positive integer");
      }
      r.turn_index = json["turn_index"].get<int>();
    }
    if (present(json, "history_preference")) r.history_preference = state_from_json(json["history_preference"]);
    if (present(json, "system_utterance")) r.system_utterance = required_string(json, "system_utterance", where);
    r.user_utterance = required_string(json, "user_utterance", where);
    if (present(json, "state_gain")) r.state_gain = gain_from_json(json["state_gain"]);
    if (present(json, "preference_extraction")) {
      r.preference_extraction = state_from_json(json["preference_extraction"]);
    }
  } catch (const FormatError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return r;
}

Json dialogue_to_json(const MultiTurnDialogue& d) {
  Json turns = Json::array();
  for (const DialogueTurn& t : d.turns) {
    turns.push_back(Json{{"system_utterance", t.system_utterance},
                         {"user_utterance", t.user_utterance},
                         {"gold_state", t.gold_state ? state_to_json(*t.gold_state) : Json(nullptr)}});
  }
  return Json{{"dialogue_id", d.dialogue_id}, {"domain_name", d.domain_name}, {"turns", turns}};
}

MultiTurnDialogue dialogue_from_json(const Json& json) {
  if (!json.is_object()) throw FormatError("dialogue must be a JSON object");
  MultiTurnDialogue d;
  d.dialogue_id = required_string(json, "dialogue_id", "dialogue");
  const std::string where = "dialogue '" + d.dialogue_id + "'";
  if (present(json, "domain_name")) d.domain_name = required_string(json, "domain_name", where);
  if (!json.contains("turns") || !json["turns"].is_array()) throw FormatError(where + ": 'turns' must be an array");
  try {
    for (const Json& t : json["turns"]) {
      if (!t.is_object()) throw FormatError("turn must be an object");
      DialogueTurn turn;
      if (present(t, "system_utterance")) turn.system_utterance = required_string(t, "system_utterance", where);
      turn.user_utterance = required_string(t, "user_utterance", where);
      if (present(t, "gold_state")) turn.gold_state = state_from_json(t["gold_state"]);
      d.turns.push_back(std::move(turn));
    }
  } catch (const FormatError& e) {
    throw FormatError(where + ": " + e.what());
  }
  check_dialogue(d);
  return d;
}

std::vector<IterChatRecord> parse_records_jsonl(std::string_view text) {
  std::vector<IterChatRecord> out;
  for (const Json& j : parse_jsonl(text)) out.push_back(record_from_json(j));
  return out;
}

std::string records_to_jsonl(const std::vector<IterChatRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<IterChatRecord> load_records(const std::string& path) {
  try {
    return parse_records_jsonl(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void save_records(const std::string& path, const std::vector<IterChatRecord>& records) {
  write_file_atomic(path, records_to_jsonl(records));
}

std::vector<MultiTurnDialogue> load_dialogues(const std::string& path) {
  std::vector<MultiTurnDialogue> out;
  try {
    for (const Json& j : parse_jsonl(read_file(path))) out.push_back(dialogue_from_json(j));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return out;
}

void save_dialogues(const std::string& path, const std::vector<MultiTurnDialogue>& dialogues) {
  std::string text;
  for (const auto& d : dialogues) {
    text += dialogue_to_json(d).dump();
    text += '\n';
  }
  write_file_atomic(path, text);
}

}  // namespace iterchat
