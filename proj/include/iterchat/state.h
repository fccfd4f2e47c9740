#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iterchat/error.h"
#include "iterchat/json.h"

namespace iterchat {

// Cumulative slot -> value-set assignment after a dialogue turn.
//
// Slots and values are compared under normalize(); the first spelling seen
// is kept for display. A slot whose value set becomes empty is removed, so
// an absent slot and an empty slot are the same thing.
class PreferenceState {
 public:
  struct Slot {
    std::string name;
    std::vector<std::string> values;  // insertion order, unique under normalize()
  };

  PreferenceState() = default;

  // Adds values to the slot. Returns the number of values that were new.
  std::size_t add(std::string_view slot, const std::vector<std::string>& values);
  std::size_t add(std::string_view slot, std::string_view value);
  // Removes values from the slot. Returns the number actually removed.
  std::size_t remove(std::string_view slot, const std::vector<std::string>& values);
  void set(std::string_view slot, const std::vector<std::string>& values);
  // Returns false if the slot was absent.
  bool clear(std::string_view slot);

  bool has_slot(std::string_view slot) const;
  bool contains(std::string_view slot, std::string_view value) const;
  // nullptr when the slot is absent.
  const Slot* find(std::string_view slot) const;

  bool empty() const { return slots_.empty(); }
  std::size_t slot_count() const { return slots_.size(); }
  std::size_t pair_count() const;

  // Keyed by normalized slot name, hence iterates in canonical slot order.
  const std::map<std::string, Slot>& slots() const { return slots_; }

  friend bool operator==(const PreferenceState& a, const PreferenceState& b);

 private:
  std::map<std::string, Slot> slots_;
};

enum class GainKind { kAdd, kRemove, kSet, kClear };

std::string_view to_string(GainKind kind);
std::optional<GainKind> parse_gain_kind(std::string_view text);

struct GainOp {
  GainKind kind = GainKind::kAdd;
  std::string slot;
  std::vector<std::string> values;  // empty for kClear

  // ADD/REMOVE/SET need at least one value, CLEAR none.
  bool well_formed() const;
  friend bool operator==(const GainOp&, const GainOp&) = default;
};

// Ordered edit script turning one PreferenceState into the next.
struct StateGain {
  std::vector<GainOp> ops;

  bool empty() const { return ops.empty(); }
  friend bool operator==(const StateGain&, const StateGain&) = default;
};

enum class ApplyMode { kStrict, kLenient };

// One rule broken while applying a gain.
struct GainViolation {
  std::size_t op_index = 0;
  std::string slot;
  std::string value;   // empty when the violation is about the whole slot
  std::string reason;  // "remove of absent value", "clear of absent slot", ...
};

class GainError : public Error {
 public:
  explicit GainError(GainViolation violation);
  const GainViolation& violation() const { return violation_; }

 private:
  GainViolation violation_;
};

// Applies ops in order to a copy of `state`. ADD unions, REMOVE deletes,
// SET replaces, CLEAR drops the slot. In strict mode the first
// REMOVE/CLEAR that names something absent (or a malformed op) throws
// GainError; in lenient mode such ops are no-ops.
PreferenceState apply_gain(const PreferenceState& state, const StateGain& gain,
                           ApplyMode mode);

struct CheckedApply {
  PreferenceState state;  // lenient result
  std::vector<GainViolation> violations;  // everything strict mode objects to
};

// Lenient application that also reports every strict-mode violation rather
// than stopping at the first one.
CheckedApply apply_gain_checked(const PreferenceState& state, const StateGain& gain);

// Canonical gain from `from` to `to`: per slot in canonical order, at most
// one ADD (values new in `to`) followed by at most one REMOVE (values gone
// from `from`). Values inside an op are sorted by normalized form.
StateGain diff_states(const PreferenceState& from, const PreferenceState& to);

// `slot=[v1,v2]; slot2=[v3]` over normalized names and values, slots and
// values sorted. Characters of the format itself (`\ = ; , [ ]`) occurring
// inside names or values are backslash-escaped so the text stays injective.
std::string canonicalize(const PreferenceState& state);

bool states_equal(const PreferenceState& a, const PreferenceState& b);

// State JSON: {"slot": ["v1", "v2"]}. Empty lists drop the slot.
Json state_to_json(const PreferenceState& state);
PreferenceState state_from_json(const Json& json);

// Gain JSON: [{"op": "add", "slot": "color", "values": ["red"]}].
// gain_from_json rejects malformed ops with FormatError.
Json gain_to_json(const StateGain& gain);
StateGain gain_from_json(const Json& json);

}  // namespace iterchat
