#include "iterchat/state.h"

#include <algorithm>
#include <utility>

#include "iterchat/text.h"

namespace iterchat {
namespace {

std::string require_key(std::string_view text, const char* what) {
  std::string key = normalize(text);
  if (key.empty()) throw Error(std::string("blank ") + what);
  return key;
}

auto find_value(std::vector<std::string>& values, const std::string& key) {
  return std::find_if(values.begin(), values.end(),
                      [&](const std::string& v) { return normalize(v) == key; });
}

std::vector<std::string> sorted_by_normal_form(std::vector<std::string> values) {
  std::vector<std::pair<std::string, std::string>> keyed;
  keyed.reserve(values.size());
  for (auto& v : values) keyed.emplace_back(normalize(v), std::move(v));
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> out;
  out.reserve(keyed.size());
  for (auto& [key, v] : keyed) out.push_back(std::move(v));
  return out;
}

void append_escaped(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '\\': case '=': case ';': case ',': case '[': case ']':
        out.push_back('\\');
        break;
      default:
        break;
    }
    out.push_back(c);
  }
}

}  // namespace

std::size_t PreferenceState::add(std::string_view slot, const std::vector<std::string>& values) {
  if (values.empty()) return 0;
  const std::string key = require_key(slot, "slot name");
  for (const auto& v : values) require_key(v, "value");
  auto [it, inserted] = slots_.try_emplace(key, Slot{std::string(slot), {}});
  std::size_t added = 0;
  for (const auto& v : values) {
    if (find_value(it->second.values, normalize(v)) == it->second.values.end()) {
      it->second.values.push_back(v);
      ++added;
    }
  }
  return added;
}

std::size_t PreferenceState::add(std::string_view slot, std::string_view value) {
  return add(slot, std::vector<std::string>{std::string(value)});
}

std::size_t PreferenceState::remove(std::string_view slot,
                                    const std::vector<std::string>& values) {
  auto it = slots_.find(normalize(slot));
  if (it == slots_.end()) return 0;
  std::size_t removed = 0;
  for (const auto& v : values) {
    auto pos = find_value(it->second.values, normalize(v));
    if (pos != it->second.values.end()) {
      it->second.values.erase(pos);
      ++removed;
    }
  }
  if (it->second.values.empty()) slots_.erase(it);
  return removed;
}

void PreferenceState::set(std::string_view slot, const std::vector<std::string>& values) {
  slots_.erase(normalize(slot));
  add(slot, values);
}

bool PreferenceState::clear(std::string_view slot) { return slots_.erase(normalize(slot)) > 0; }

bool PreferenceState::has_slot(std::string_view slot) const {
  return slots_.count(normalize(slot)) > 0;
}

bool PreferenceState::contains(std::string_view slot, std::string_view value) const {
  const Slot* s = find(slot);
  if (s == nullptr) return false;
  const std::string key = normalize(value);
  return std::any_of(s->values.begin(), s->values.end(),
                     [&](const std::string& v) { return normalize(v) == key; });
}

const PreferenceState::Slot* PreferenceState::find(std::string_view slot) const {
  auto it = slots_.find(normalize(slot));
  return it == slots_.end() ? nullptr : &it->second;
}

std::size_t PreferenceState::pair_count() const {
  std::size_t n = 0;
  for (const auto& [key, slot] : slots_) n += slot.values.size();
  return n;
}

bool operator==(const PreferenceState& a, const PreferenceState& b) {
  return canonicalize(a) == canonicalize(b);
}

std::string_view to_string(GainKind kind) {
  switch (kind) {
    case GainKind::kAdd: return "add";
    case GainKind::kRemove: return "remove";
    case GainKind::kSet: return "set";
    case GainKind::kClear: return "clear";
  }
  return "?";
}

std::optional<GainKind> parse_gain_kind(std::string_view text) {
  const std::string key = normalize(text);
  if (key == "add") return GainKind::kAdd;
  if (key == "remove") return GainKind::kRemove;
  if (key == "set") return GainKind::kSet;
  if (key == "clear") return GainKind::kClear;
  return std::nullopt;
}

bool GainOp::well_formed() const {
  if (normalize(slot).empty()) return false;
  if (std::any_of(values.begin(), values.end(),
                  [](const std::string& v) { return normalize(v).empty(); })) {
    return false;
  }
  return kind == GainKind::kClear ? values.empty() : !values.empty();
}

GainError::GainError(GainViolation violation)
    : Error("op " + std::to_string(violation.op_index) + " on slot '" + violation.slot + "'" +
            (violation.value.empty() ? "" : " value '" + violation.value + "'") + ": " +
            violation.reason),
      violation_(std::move(violation)) {}

CheckedApply apply_gain_checked(const PreferenceState& state, const StateGain& gain) {
  CheckedApply out{state, {}};
  PreferenceState& s = out.state;
  for (std::size_t i = 0; i < gain.ops.size(); ++i) {
    const GainOp& op = gain.ops[i];
    if (!op.well_formed()) {
      out.violations.push_back({i, op.slot, "", "malformed op"});
      continue;
    }
    switch (op.kind) {
      case GainKind::kAdd:
        s.add(op.slot, op.values);
        break;
      case GainKind::kRemove:
        // An absent slot holds no values, so each named value is absent.
        for (const auto& v : op.values) {
          if (!s.contains(op.slot, v)) {
            out.violations.push_back({i, op.slot, v, "remove of absent value"});
          }
        }
        s.remove(op.slot, op.values);
        break;
      case GainKind::kSet:
        s.set(op.slot, op.values);
        break;
      case GainKind::kClear:
        if (!s.clear(op.slot)) out.violations.push_back({i, op.slot, "", "clear of absent slot"});
        break;
    }
  }
  return out;
}

PreferenceState apply_gain(const PreferenceState& state, const StateGain& gain, ApplyMode mode) {
  CheckedApply result = apply_gain_checked(state, gain);
  if (mode == ApplyMode::kStrict && !result.violations.empty()) {
    throw GainError(result.violations.front());
  }
  return std::move(result.state);
}

StateGain diff_states(const PreferenceState& from, const PreferenceState& to) {
  StateGain gain;
  auto a = from.slots().begin();
  auto b = to.slots().begin();
  const auto a_end = from.slots().end();
  const auto b_end = to.slots().end();
  while (a != a_end || b != b_end) {
    const PreferenceState::Slot* old_slot = nullptr;
    const PreferenceState::Slot* new_slot = nullptr;
    if (b == b_end || (a != a_end && a->first < b->first)) {
      old_slot = &(a++)->second;
    } else if (a == a_end || b->first < a->first) {
      new_slot = &(b++)->second;
    } else {
      old_slot = &(a++)->second;
      new_slot = &(b++)->second;
    }
    std::vector<std::string> added;
    std::vector<std::string> removed;
    if (new_slot != nullptr) {
      for (const auto& v : new_slot->values) {
        if (old_slot == nullptr || !from.contains(old_slot->name, v)) added.push_back(v);
      }
    }
    if (old_slot != nullptr) {
      for (const auto& v : old_slot->values) {
        if (new_slot == nullptr || !to.contains(new_slot->name, v)) removed.push_back(v);
      }
    }
    if (!added.empty()) {
      gain.ops.push_back({GainKind::kAdd, new_slot->name, sorted_by_normal_form(std::move(added))});
    }
    if (!removed.empty()) {
      gain.ops.push_back(
          {GainKind::kRemove, old_slot->name, sorted_by_normal_form(std::move(removed))});
    }
  }
  return gain;
}

std::string canonicalize(const PreferenceState& state) {
  std::string out;
  for (const auto& [key, slot] : state.slots()) {
    if (!out.empty()) out += "; ";
    append_escaped(out, key);
    out += "=[";
    std::vector<std::string> values;
    values.reserve(slot.values.size());
    for (const auto& v : slot.values) values.push_back(normalize(v));
    std::sort(values.begin(), values.end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) out += ',';
      append_escaped(out, values[i]);
    }
    out += ']';
  }
  return out;
}

bool states_equal(const PreferenceState& a, const PreferenceState& b) {
  return canonicalize(a) == canonicalize(b);
}

Json state_to_json(const PreferenceState& state) {
  Json out = Json::object();
  for (const auto& [key, slot] : state.slots()) out[slot.name] = slot.values;
  return out;
}

PreferenceState state_from_json(const Json& json) {
  if (!json.is_object()) throw FormatError("state must be a JSON object");
  PreferenceState state;
  for (const auto& [slot, values] : json.items()) {
    if (!values.is_array()) throw FormatError("state slot '" + slot + "' must be an array");
    std::vector<std::string> vs;
    for (const auto& v : values) {
      if (!v.is_string()) throw FormatError("state slot '" + slot + "' has a non-string value");
      vs.push_back(v.get<std::string>());
    }
    try {
      state.add(slot, vs);
    } catch (const Error& e) {
      throw FormatError("state slot '" + slot + "': " + e.what());
    }
  }
  return state;
}

Json gain_to_json(const StateGain& gain) {
  Json out = Json::array();
  for (const GainOp& op : gain.ops) {
    out.push_back(Json{{"op", to_string(op.kind)}, {"slot", op.slot}, {"values", op.values}});
  }
  return out;
}

StateGain gain_from_json(const Json& json) {
  if (!json.is_array()) throw FormatError("gain must be a JSON array");
  StateGain gain;
  for (std::size_t i = 0; i < json.size(); ++i) {
    const Json& item = json[i];
    const std::string where = "gain op " + std::to_string(i);
    if (!item.is_object()) throw FormatError(where + ": not an object");
    if (!item.contains("op") || !item["op"].is_string()) throw FormatError(where + ": missing op");
    const auto kind = parse_gain_kind(item["op"].get<std::string>());
    if (!kind) throw FormatError(where + ": unknown op '" + item["op"].get<std::string>() + "'");
    if (!item.contains("slot") || !item["slot"].is_string()) {
      throw FormatError(where + ": missing slot");
    }
    GainOp op{*kind, item["slot"].get<std::string>(), {}};
    if (item.contains("values")) {
      if (!item["values"].is_array()) throw FormatError(where + ": values must be an array");
      for (const auto& v : item["values"]) {
        if (!v.is_string()) throw FormatError(where + ": non-string value");
        op.values.push_back(v.get<std::string>());
      }
    }
    if (!op.well_formed()) {
      throw FormatError(where + " (" + std::string(to_string(op.kind)) + " " + op.slot +
                        "): wrong value count or blank name");
    }
    gain.ops.push_back(std::move(op));
  }
  return gain;
}

}  // namespace iterchat
