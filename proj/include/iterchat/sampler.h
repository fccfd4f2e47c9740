#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iterchat/dataset.h"
#include "iterchat/error.h"
#include "iterchat/json.h"
#include "iterchat/state.h"

namespace iterchat {

class Backend;
struct PreferenceSchema;
struct PromptTemplates;

struct IntRange {
  int min = 0;
  int max = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

enum class GainMixKind { kAddNewSlot, kAddValueToExisting, kRemoveValue, kUpdateValue };

std::string_view to_string(GainMixKind kind);

struct GainMix {
  double add_new_slot = 1.0;
  double add_value_to_existing = 1.0;
  double remove_value = 1.0;
  double update_value = 1.0;

  double weight(GainMixKind kind) const;
};

struct SamplerConfig {
  std::uint64_t seed = 0;
  IntRange history_slot_count{0, 3};
  IntRange history_turn_count{1, 6};  // context metadata only
  GainMix gain_mix;
  IntRange ops_per_record{1, 2};
  int record_count = 100;
  int max_attempts = 3;  // realization attempts per record
  int jobs = 1;

  // Throws SamplerError for negative weights, all-zero weights, empty
  // ranges, record_count < 1 and combinations that can never yield an op.
  void check() const;

  static SamplerConfig from_json(const Json& json);
  Json to_json() const;
};

class SamplerError : public Error {
 public:
  using Error::Error;
};

struct ContextMeta {
  int past_turn_count = 0;
  std::string timestamp;  // opaque, ISO-8601 UTC
};

struct SampledScenario {
  PreferenceState history_state;
  PreferenceState target_state;
  StateGain gain;
  std::vector<GainMixKind> op_kinds;  // one per sampled edit (update = 2 gain ops)
  ContextMeta context_meta;
};

// Draw number `draw_index` for `config.seed`. Each draw has its own RNG
// stream, so the result depends only on (schema, config, seed, index).
SampledScenario sample_scenario(const PreferenceSchema& schema, const SamplerConfig& config,
                                std::uint64_t draw_index);

class RealizationError : public Error {
 public:
  using Error::Error;
};

// Asks the backend for the one-turn dialogue expressing the scenario's
// gain. Labels come from the scenario and are never altered.
IterChatRecord realize_record(const SampledScenario& scenario, const PreferenceSchema& schema,
                              Backend& backend, const PromptTemplates& prompts,
                              std::string record_id);

struct GenerationStats {
  int requested = 0;
  int produced = 0;
  int failed = 0;
  int retries = 0;
  std::map<std::string, int> op_kinds;    // sampled edit kinds
  std::map<std::string, int> gain_ops;    // "add" / "remove" op counts
  std::map<std::string, int> gain_shapes; // "add_only" / "remove_only" / "mixed"
  std::map<std::string, int> slot_coverage;  // slot -> gains touching it

  Json to_json() const;
};

struct GenerationResult {
  std::vector<IterChatRecord> records;
  GenerationStats stats;
};

class GenerationAborted : public Error {
 public:
  GenerationAborted(const std::string& what, GenerationResult partial)
      : Error(what), partial_(std::move(partial)) {}
  const GenerationResult& partial() const { return partial_; }

 private:
  GenerationResult partial_;
};

// record_count scenarios realized in draw order (config.jobs workers).
// A record that still fails after max_attempts is skipped and counted;
// when failures reach 10% of record_count, throws GenerationAborted with
// what was produced so far.
GenerationResult generate_dataset(const PreferenceSchema& schema, const SamplerConfig& config,
                                  Backend& backend, const PromptTemplates& prompts);

}  // namespace iterchat
