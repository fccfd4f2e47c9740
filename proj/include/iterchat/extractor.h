#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "iterchat/backend.h"
#include "iterchat/dataset.h"
#include "iterchat/error.h"
#include "iterchat/json.h"
#include "iterchat/state.h"

namespace iterchat {

struct PreferenceSchema;
struct PromptTemplates;

enum class PromptMode { kIterChat, kMultiTurn };

std::string_view to_string(PromptMode mode);
std::optional<PromptMode> parse_prompt_mode(std::string_view text);

// One in-context demonstration, already rendered.
struct DemoExample {
  std::string input;
  std::string output;
};

// Demonstrations from labeled data. Records feed iterchat mode, dialogues
// feed multi-turn mode. Throws FormatError on unlabeled input.
DemoExample make_demo(const IterChatRecord& record);
DemoExample make_demo(const MultiTurnDialogue& dialogue);
// First `k` labeled entries of a demo JSONL file, rendered for `mode`.
std::vector<DemoExample> load_demos(const std::string& path, PromptMode mode, std::size_t k);

// Markers the renderers use; structural tests count them.
inline constexpr std::string_view kDemoHeader = "### Example ";
inline constexpr std::string_view kInputHeader = "### Input";
inline constexpr std::string_view kHistoryHeader = "History Preference:";
inline constexpr std::string_view kSystemLine = "[system]: ";
inline constexpr std::string_view kUserLine = "[user]: ";
inline constexpr std::string_view kOutputHeader = "Output:";

std::string render_iterchat_input(const IterChatRecord& record);
std::string render_multi_turn_input(const MultiTurnDialogue& dialogue);

using PromptInput = std::variant<IterChatRecord, MultiTurnDialogue>;

// [system, user]. The system message carries the role, the slot list and
// the output contract; the user message carries the demos then the input.
// Throws Error when the input kind does not match the mode.
std::vector<ChatMessage> build_prompt(PromptMode mode, const PreferenceSchema& schema,
                                      const std::vector<DemoExample>& demos,
                                      const PromptInput& input, const PromptTemplates& prompts);

enum class ParseStatus { kOk, kRepaired, kFailed };

std::string_view to_string(ParseStatus status);
std::optional<ParseStatus> parse_parse_status(std::string_view text);

struct ExtractionResult {
  StateGain state_gain;
  PreferenceState preference_extraction;
  std::string raw_output;
  ParseStatus parse_status = ParseStatus::kFailed;
  // "slot=value: reason" for values the schema does not allow. Kept, not dropped.
  std::vector<std::string> schema_warnings;
};

// Reads the first JSON object in `raw`. When both keys are present and
// agree the status is ok; when only one is present, or the extraction
// disagrees with history + gain, the other is derived (gain wins) and the
// status is repaired. Never throws: unusable output yields status failed,
// an empty gain and extraction == history.
ExtractionResult parse_extraction_output(std::string_view raw, const PreferenceSchema& schema,
                                         const PreferenceState& history);

// Multi-turn replies carry only the final state; a missing gain is not a repair.
ExtractionResult parse_final_state_output(std::string_view raw, const PreferenceSchema& schema);

class ExtractionError : public Error {
 public:
  ExtractionError(const std::string& what, std::vector<PreferenceState> partial = {})
      : Error(what), partial_(std::move(partial)) {}
  // States extracted before the failure (iterative mode).
  const std::vector<PreferenceState>& partial() const { return partial_; }

 private:
  std::vector<PreferenceState> partial_;
};

struct ExtractorContext {
  const PreferenceSchema& schema;
  const std::vector<DemoExample>& demos;
  Backend& backend;
  const PromptTemplates& prompts;
};

// Supplies the directive for a prompt when the backend accepts directives.
// Receives the record about to be extracted (turn_index set in iterative mode).
using DirectiveSource = std::function<std::optional<Json>(const IterChatRecord&)>;

// Labels already present on `record` are ignored.
ExtractionResult extract_turn(const IterChatRecord& record, const ExtractorContext& context,
                              const DirectiveSource& directive = {});

struct Trajectory {
  std::vector<ExtractionResult> turns;
  std::vector<PreferenceState> states() const;
};

// Carries the predicted state forward one turn at a time: turn t is
// extracted against the state predicted after turn t-1 (empty for t = 1).
Trajectory extract_dialogue_iterative(const MultiTurnDialogue& dialogue,
                                      const ExtractorContext& context,
                                      const DirectiveSource& directive = {});

// Whole dialogue in one prompt; predicts the final state only.
ExtractionResult extract_dialogue_multi_turn(const MultiTurnDialogue& dialogue,
                                             const ExtractorContext& context,
                                             const std::optional<Json>& directive = {});

// Directive sources answering with gold labels ("echo" backend runs).
Json extraction_directive(const StateGain& gain, const PreferenceState& extraction);
DirectiveSource gold_record_directives(const std::vector<IterChatRecord>& gold);
DirectiveSource gold_dialogue_directives(const MultiTurnDialogue& gold);

}  // namespace iterchat
