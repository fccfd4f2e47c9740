#pragma once

#include <random>
#include <string>
#include <vector>

#include "iterchat/dataset.h"
#include "iterchat/schema.h"
#include "iterchat/state.h"
#include "oracles.h"

namespace fixtures {

// price (closed, single), color (closed, multi), brand (open, multi).
iterchat::PreferenceSchema shop_schema();

// s0..s9, each multi-valued with values v0..v5.
iterchat::PreferenceSchema ten_slot_schema();

// Up to `max_slots` slots of `schema`, each with 1..3 of its values.
iterchat::PreferenceState random_state(std::mt19937_64& rng, const iterchat::PreferenceSchema& schema,
                                       std::size_t max_slots);

// Fully labeled dialogue whose gold state changes by random edits.
iterchat::MultiTurnDialogue random_dialogue(std::mt19937_64& rng, const iterchat::PreferenceSchema& schema,
                                            const std::string& id, int turns);

oracle::SetState to_set_state(const iterchat::PreferenceState& state);
std::vector<oracle::Op> to_ops(const iterchat::StateGain& gain);

// mkdtemp directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

}  // namespace fixtures
