#include "fixtures.h"

#include <cstdlib>
#include <filesystem>

namespace fixtures {

using namespace iterchat;

PreferenceSchema shop_schema() {
  PreferenceSchema s;
  s.domain_name = "shop";
  s.version = "1";
  s.slots.push_back({"price", "budget", false, {"less than $50", "between $100 and $200", "None"}, false});
  s.slots.push_back({"color", "colors", true, {"red", "blue", "green"}, false});
  s.slots.push_back({"brand", "brands", true, {"acme", "globex"}, true});
  check_schema(s);
  return s;
}

PreferenceSchema ten_slot_schema() {
  PreferenceSchema s;
  s.domain_name = "synthetic";
  s.version = "1";
  for (int i = 0; i < 10; ++i) {
    SlotDefinition slot;
    slot.name = "s" + std::to_string(i);
    slot.multi_valued = true;
    for (int v = 0; v < 6; ++v) slot.schema_values.push_back("v" + std::to_string(v));
    s.slots.push_back(slot);
  }
  check_schema(s);
  return s;
}

PreferenceState random_state(std::mt19937_64& rng, const PreferenceSchema& schema, std::size_t max_slots) {
  PreferenceState state;
  std::uniform_int_distribution<std::size_t> count(0, max_slots);
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const SlotDefinition& slot = schema.slots[std::uniform_int_distribution<std::size_t>(0, schema.slots.size() - 1)(rng)];
    const std::size_t k = slot.multi_valued ? std::uniform_int_distribution<std::size_t>(1, 3)(rng) : 1;
    std::vector<std::string> values;
    for (std::size_t j = 0; j < k; ++j) {
      values.push_back(slot.schema_values[std::uniform_int_distribution<std::size_t>(0, slot.schema_values.size() - 1)(rng)]);
    }
    if (!slot.multi_valued && state.has_slot(slot.name)) continue;
    state.add(slot.name, values);
  }
  return state;
}

MultiTurnDialogue random_dialogue(std::mt19937_64& rng, const PreferenceSchema& schema, const std::string& id,
                                  int turns) {
  MultiTurnDialogue d;
  d.dialogue_id = id;
  d.domain_name = schema.domain_name;
  PreferenceState state;
  for (int t = 1; t <= turns; ++t) {
    // Mix of carrying over, dropping and adding, so some turns change nothing.
    PreferenceState next = random_state(rng, schema, 2);
    for (const auto& [key, slot] : state.slots()) {
      if (std::uniform_int_distribution<int>(0, 3)(rng) != 0) next.add(slot.name, slot.values);
    }
    DialogueTurn turn;
    turn.system_utterance = t == 1 ? "" : "How else can I help at step " + std::to_string(t) + "?";
    turn.user_utterance = "user turn " + std::to_string(t) + " of " + id;
    turn.gold_state = next;
    d.turns.push_back(turn);
    state = next;
  }
  return d;
}

oracle::SetState to_set_state(const PreferenceState& state) {
  oracle::SetState out;
  for (const auto& [key, slot] : state.slots()) {
    for (const auto& v : slot.values) out[oracle::norm(slot.name)].insert(oracle::norm(v));
  }
  return out;
}

std::vector<oracle::Op> to_ops(const StateGain& gain) {
  std::vector<oracle::Op> out;
  for (const auto& op : gain.ops) out.push_back({std::string(to_string(op.kind)), op.slot, op.values});
  return out;
}

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "iterchat-test-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace fixtures
