#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iterchat/error.h"
#include "iterchat/json.h"
#include "iterchat/state.h"

namespace iterchat {

struct PreferenceSchema;

struct DialogueTurn {
  std::string system_utterance;  // may be empty on the first turn
  std::string user_utterance;
  std::optional<PreferenceState> gold_state;  // cumulative state after this turn
};

struct MultiTurnDialogue {
  std::string dialogue_id;
  std::string domain_name;
  std::vector<DialogueTurn> turns;

  bool labeled() const;
};

// History preference plus the most recent one-turn dialogue, optionally
// with the two labels (state gain and the resulting preference state).
struct IterChatRecord {
  std::string record_id;
  std::optional<std::string> source_dialogue_id;
  std::optional<int> turn_index;  // 1-based
  PreferenceState history_preference;
  std::string system_utterance;
  std::string user_utterance;
  std::optional<StateGain> state_gain;
  std::optional<PreferenceState> preference_extraction;

  bool labeled() const { return state_gain && preference_extraction; }
  // The record with both labels dropped.
  IterChatRecord unlabeled() const;
};

// Throws FormatError when a dialogue breaks its invariants (no turns,
// empty user utterance, partially labeled).
void check_dialogue(const MultiTurnDialogue& dialogue);

// True when both labels are present and history + gain reproduces the
// extraction under `mode`. Unlabeled records return false.
bool record_consistent(const IterChatRecord& record, ApplyMode mode);

// Record ids produced by explode() and by the iterative extractor.
std::string turn_record_id(std::string_view dialogue_id, int turn_index);

// One record per turn: history = gold state of the previous turn (empty
// for the first), gain = diff_states(previous, current), extraction =
// current gold state.
std::vector<IterChatRecord> explode(const MultiTurnDialogue& dialogue);

// Left fold of the gains starting from the empty state, checking that
// turn indices are consecutive from 1 and that each record's history
// matches the fold so far. Throws FormatError on a gap or mismatch.
PreferenceState replay(const std::vector<IterChatRecord>& records);

// External-dataset slot key -> internal slot name, or "drop".
struct SlotMapping {
  std::map<std::string, std::string> entries;

  static constexpr std::string_view kDrop = "drop";
  static SlotMapping from_json(const Json& json);
};

struct IngestResult {
  std::vector<MultiTurnDialogue> dialogues;
  // One warning per (dialogue, external key) that was dropped, either
  // explicitly or because the mapping does not mention it.
  std::size_t warning_count = 0;
  std::map<std::string, std::size_t> dropped_keys;
};

// Reads MultiWOZ-style annotations. Two layouts are accepted: the
// turn-list layout (array of {"dialogue_idx", "dialogue": [{"system_transcript",
// "transcript", "belief_state": [{"slots": [[key, value]]}]}]}) and the
// original log layout ({id: {"log": [{"text", "metadata"}]}}). Values are
// normalized; "", "none" and "not mentioned" mean the slot is unset.
// When `schema` is given, mapped internal slots must exist in it.
IngestResult ingest_external(std::string_view raw, const SlotMapping& mapping,
                             const PreferenceSchema* schema = nullptr,
                             std::string_view domain_name = "hotel");

Json record_to_json(const IterChatRecord& record);
IterChatRecord record_from_json(const Json& json);
Json dialogue_to_json(const MultiTurnDialogue& dialogue);
MultiTurnDialogue dialogue_from_json(const Json& json);

std::vector<IterChatRecord> load_records(const std::string& path);
void save_records(const std::string& path, const std::vector<IterChatRecord>& records);
std::vector<MultiTurnDialogue> load_dialogues(const std::string& path);
void save_dialogues(const std::string& path, const std::vector<MultiTurnDialogue>& dialogues);

std::vector<IterChatRecord> parse_records_jsonl(std::string_view text);
std::string records_to_jsonl(const std::vector<IterChatRecord>& records);

}  // namespace iterchat
