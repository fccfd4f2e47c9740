#include "iterchat/sampler.h"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <exception>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "iterchat/backend.h"
#include "iterchat/prompts.h"
#include "iterchat/schema.h"
#include "iterchat/text.h"

namespace iterchat {

std::string_view to_string(GainMixKind kind) {
  switch (kind) {
    case GainMixKind::kAddNewSlot: return "add_new_slot";
    case GainMixKind::kAddValueToExisting: return "add_value_to_existing";
    case GainMixKind::kRemoveValue: return "remove_value";
    case GainMixKind::kUpdateValue: return "update_value";
  }
  return "?";
}

namespace {

constexpr GainMixKind kAllKinds[] = {GainMixKind::kAddNewSlot, GainMixKind::kAddValueToExisting,
                                     GainMixKind::kRemoveValue, GainMixKind::kUpdateValue};

// mt19937_64 and seed_seq are fully specified, unlike the standard
// distributions, so draws are reproduced bit-for-bit on any platform.
class DrawRng {
 public:
  DrawRng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    engine_.seed(seq);
  }

  // Uniform in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int between(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // k distinct picks from `pool`, in draw order.
  template <typename T>
  std::vector<T> pick(std::vector<T> pool, std::size_t k) {
    k = std::min(k, pool.size());
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 engine_;
};

IntRange range_from_json(const Json& json, const char* key, IntRange fallback) {
  if (!json.contains(key)) return fallback;
  const Json& v = json[key];
  if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
  if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer()) {
    return {v[0].get<int>(), v[1].get<int>()};
  }
  if (v.is_object() && v.contains("min") && v.contains("max")) {
    return {v["min"].get<int>(), v["max"].get<int>()};
  }
  throw SamplerError(std::string("sampler config '") + key + "' must be [min, max]");
}

std::vector<std::size_t> samplable_slots(const PreferenceSchema& schema) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    if (!schema.slots[i].schema_values.empty()) out.push_back(i);
  }
  return out;
}

std::string format_timestamp(std::int64_t seconds) {
  const std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Schema values of `slot` not currently held in `state`.
std::vector<std::string> unused_values(const SlotDefinition& slot, const PreferenceState& state) {
  std::vector<std::string> out;
  for (const auto& v : slot.schema_values) {
    if (!state.contains(slot.name, v)) out.push_back(v);
  }
  return out;
}

std::vector<const SlotDefinition*> candidates(GainMixKind kind, const PreferenceSchema& schema,
                                              const std::vector<std::size_t>& samplable,
                                              const PreferenceState& working,
                                              const std::set<std::string>& touched) {
  std::vector<const SlotDefinition*> out;
  for (std::size_t i : samplable) {
    const SlotDefinition& slot = schema.slots[i];
    if (touched.count(normalize(slot.name)) > 0) continue;
    const bool held = working.has_slot(slot.name);
    switch (kind) {
      case GainMixKind::kAddNewSlot:
        if (!held) out.push_back(&slot);
        break;
      case GainMixKind::kAddValueToExisting:
        if (held && slot.multi_valued && !unused_values(slot, working).empty()) out.push_back(&slot);
        break;
      case GainMixKind::kRemoveValue:
        if (held) out.push_back(&slot);
        break;
      case GainMixKind::kUpdateValue:
        if (held && !unused_values(slot, working).empty()) out.push_back(&slot);
        break;
    }
  }
  return out;
}

std::string infeasible_reason(GainMixKind kind) {
  switch (kind) {
    case GainMixKind::kAddNewSlot: return "add_new_slot needs a schema slot absent from the history";
    case GainMixKind::kAddValueToExisting:
      return "add_value_to_existing needs a multi-valued history slot with an unused schema value";
    case GainMixKind::kRemoveValue: return "remove_value needs a non-empty history";
    case GainMixKind::kUpdateValue: return "update_value needs a history slot with an unused schema value";
  }
  return "";
}

}  // namespace

double GainMix::weight(GainMixKind kind) const {
  switch (kind) {
    case GainMixKind::kAddNewSlot: return add_new_slot;
    case GainMixKind::kAddValueToExisting: return add_value_to_existing;
    case GainMixKind::kRemoveValue: return remove_value;
    case GainMixKind::kUpdateValue: return update_value;
  }
  return 0.0;
}

void SamplerConfig::check() const {
  double total = 0.0;
  for (GainMixKind k : kAllKinds) {
    const double w = gain_mix.weight(k);
    if (!(w >= 0.0)) throw SamplerError("gain_mix." + std::string(to_string(k)) + " must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw SamplerError("gain_mix needs at least one positive weight");
  auto check_range = [](const IntRange& r, const char* name, int floor) {
    if (r.min < floor || r.max < r.min) {
      throw SamplerError(std::string(name) + " must satisfy " + std::to_string(floor) + " <= min <= max");
    }
  };
  check_range(history_slot_count, "history_slot_count", 0);
  check_range(history_turn_count, "history_turn_count", 0);
  check_range(ops_per_record, "ops_per_record", 1);
  if (record_count < 1) throw SamplerError("record_count must be >= 1");
  if (max_attempts < 1) throw SamplerError("max_attempts must be >= 1");
  if (jobs < 1) throw SamplerError("jobs must be >= 1");
  if (history_slot_count.max == 0) {
    // Every kind except add_new_slot edits a history slot, and ops within a
    // record touch distinct slots, so an empty history leaves them infeasible.
    for (GainMixKind k : kAllKinds) {
      if (k != GainMixKind::kAddNewSlot && gain_mix.weight(k) > 0.0) {
        throw SamplerError("gain_mix." + std::string(to_string(k)) +
                           " has positive weight but history_slot_count forces an empty history");
      }
    }
  }
}

SamplerConfig SamplerConfig::from_json(const Json& json) {
  if (!json.is_object()) throw SamplerError("sampler config must be a JSON object");
  SamplerConfig c;
  try {
    if (json.contains("seed")) c.seed = json["seed"].get<std::uint64_t>();
    c.history_slot_count = range_from_json(json, "history_slot_count", c.history_slot_count);
    c.history_turn_count = range_from_json(json, "history_turn_count", c.history_turn_count);
    c.ops_per_record = range_from_json(json, "ops_per_record", c.ops_per_record);
    if (json.contains("gain_mix")) {
      const Json& mix = json["gain_mix"];
      if (!mix.is_object()) throw SamplerError("gain_mix must be an object");
      for (const auto& [key, value] : mix.items()) {
        if (key == "add_new_slot") c.gain_mix.add_new_slot = value.get<double>();
        else if (key == "add_value_to_existing") c.gain_mix.add_value_to_existing = value.get<double>();
        else if (key == "remove_value") c.gain_mix.remove_value = value.get<double>();
        else if (key == "update_value") c.gain_mix.update_value = value.get<double>();
        else throw SamplerError("unknown gain_mix kind '" + key + "'");
      }
    }
    if (json.contains("record_count")) c.record_count = json["record_count"].get<int>();
    if (json.contains("max_attempts")) c.max_attempts = json["max_attempts"].get<int>();
    if (json.contains("jobs")) c.jobs = json["jobs"].get<int>();
  } catch (const Json::exception& e) {
    throw SamplerError(std::string("sampler config: ") + e.what());
  }
  c.check();
  return c;
}

Json SamplerConfig::to_json() const {
  return Json{{"seed", seed},
              {"history_slot_count", {history_slot_count.min, history_slot_count.max}},
              {"history_turn_count", {history_turn_count.min, history_turn_count.max}},
              {"gain_mix",
               {{"add_new_slot", gain_mix.add_new_slot},
                {"add_value_to_existing", gain_mix.add_value_to_existing},
                {"remove_value", gain_mix.remove_value},
                {"update_value", gain_mix.update_value}}},
              {"ops_per_record", {ops_per_record.min, ops_per_record.max}},
              {"record_count", record_count},
              {"max_attempts", max_attempts},
              {"jobs", jobs}};
}

SampledScenario sample_scenario(const PreferenceSchema& schema, const SamplerConfig& config,
                                std::uint64_t draw_index) {
  config.check();
  const std::vector<std::size_t> samplable = samplable_slots(schema);
  if (static_cast<std::size_t>(config.history_slot_count.min) > samplable.size()) {
    throw SamplerError("history_slot_count min " + std::to_string(config.history_slot_count.min) +
                       " exceeds the " + std::to_string(samplable.size()) + " schema slots with values");
  }
  DrawRng rng(config.seed, draw_index);
  SampledScenario sc;

  // History: uniform slot subset, uniform values per slot.
  const int history_max = std::min(config.history_slot_count.max, static_cast<int>(samplable.size()));
  const int history_slots = rng.between(config.history_slot_count.min, history_max);
  for (std::size_t i : rng.pick(samplable, static_cast<std::size_t>(history_slots))) {
    const SlotDefinition& slot = schema.slots[i];
    const int max_values = slot.multi_valued ? std::min<int>(2, static_cast<int>(slot.schema_values.size())) : 1;
    const int count = rng.between(1, max_values);
    sc.history_state.add(slot.name, rng.pick(slot.schema_values, static_cast<std::size_t>(count)));
  }
  sc.context_meta.past_turn_count = rng.between(config.history_turn_count.min, config.history_turn_count.max);
  constexpr std::int64_t kEpoch2024 = 1704067200;  // 2024-01-01T00:00:00Z
  sc.context_meta.timestamp =
      format_timestamp(kEpoch2024 + static_cast<std::int64_t>(rng.below(366ULL * 24 * 60)) * 60);

  // Gain: each op touches a distinct slot so no op undoes another.
  PreferenceState working = sc.history_state;
  std::set<std::string> touched;
  const int op_count = rng.between(config.ops_per_record.min, config.ops_per_record.max);
  for (int j = 0; j < op_count; ++j) {
    std::vector<std::pair<GainMixKind, std::vector<const SlotDefinition*>>> feasible;
    double total = 0.0;
    std::vector<std::string> reasons;
    for (GainMixKind kind : kAllKinds) {
      const double w = config.gain_mix.weight(kind);
      if (w <= 0.0) continue;
      auto slots = candidates(kind, schema, samplable, working, touched);
      if (slots.empty()) {
        reasons.push_back(infeasible_reason(kind));
        continue;
      }
      total += w;
      feasible.emplace_back(kind, std::move(slots));
    }
    if (feasible.empty()) {
      if (j == 0) throw SamplerError("unsatisfiable config: " + join(reasons, "; "));
      break;
    }
    double u = rng.unit() * total;
    std::size_t chosen = feasible.size() - 1;
    for (std::size_t k = 0; k < feasible.size(); ++k) {
      u -= config.gain_mix.weight(feasible[k].first);
      if (u < 0.0) {
        chosen = k;
        break;
      }
    }
    const GainMixKind kind = feasible[chosen].first;
    const auto& slots = feasible[chosen].second;
    const SlotDefinition& slot = *slots[rng.below(slots.size())];
    std::vector<GainOp> ops;
    switch (kind) {
      case GainMixKind::kAddNewSlot:
        ops.push_back({GainKind::kAdd, slot.name, rng.pick(slot.schema_values, 1)});
        break;
      case GainMixKind::kAddValueToExisting:
        ops.push_back({GainKind::kAdd, slot.name, rng.pick(unused_values(slot, working), 1)});
        break;
      case GainMixKind::kRemoveValue:
        ops.push_back({GainKind::kRemove, slot.name, rng.pick(working.find(slot.name)->values, 1)});
        break;
      case GainMixKind::kUpdateValue: {
        auto old_value = rng.pick(working.find(slot.name)->values, 1);
        auto new_value = rng.pick(unused_values(slot, working), 1);
        ops.push_back({GainKind::kRemove, slot.name, std::move(old_value)});
        ops.push_back({GainKind::kAdd, slot.name, std::move(new_value)});
        break;
      }
    }
    StateGain step{ops};
    working = apply_gain(working, step, ApplyMode::kStrict);
    for (auto& op : ops) sc.gain.ops.push_back(std::move(op));
    sc.op_kinds.push_back(kind);
    touched.insert(normalize(slot.name));
  }
  sc.target_state = std::move(working);
  return sc;
}

IterChatRecord realize_record(const SampledScenario& scenario, const PreferenceSchema& schema,
                              Backend& backend, const PromptTemplates& prompts, std::string record_id) {
  if (scenario.gain.empty()) throw RealizationError("scenario has an empty gain");
  std::string gain_text;
  for (const GainOp& op : scenario.gain.ops) {
    gain_text += "- " + std::string(to_string(op.kind)) + " " + op.slot;
    if (!op.values.empty()) gain_text += ": " + join(op.values, ", ");
    gain_text += "\n";
  }
  const std::map<std::string, std::string> vars{
      {"domain", schema.domain_name},
      {"schema_slots", render_schema_slots(schema)},
      {"history", state_to_json(scenario.history_state).dump()},
      {"gain_text", gain_text},
      {"target", state_to_json(scenario.target_state).dump()},
      {"past_turn_count", std::to_string(scenario.context_meta.past_turn_count)},
      {"timestamp", scenario.context_meta.timestamp}};
  std::vector<ChatMessage> messages{{Role::kSystem, render_template(prompts.realize_system, vars)},
                                    {Role::kUser, render_template(prompts.realize_user, vars)}};
  if (backend.accepts_directives()) {
    attach_directive(messages, Json{{"kind", "realize"},
                                    {"gain", gain_to_json(scenario.gain)},
                                    {"history", state_to_json(scenario.history_state)}});
  }
  const std::string reply = backend.complete(messages);
  const auto json = extract_first_json_object(reply);
  if (!json) throw RealizationError("realization reply has no JSON object");
  auto field = [&](const char* key) -> std::string {
    auto it = json->find(key);
    return it != json->end() && it->is_string() ? trim(it->get<std::string>()) : std::string();
  };
  IterChatRecord record;
  record.record_id = std::move(record_id);
  record.turn_index = scenario.context_meta.past_turn_count + 1;
  record.history_preference = scenario.history_state;
  record.system_utterance = field("system_utterance");
  record.user_utterance = field("user_utterance");
  if (record.user_utterance.empty()) throw RealizationError("generated user utterance is empty");
  record.state_gain = scenario.gain;
  record.preference_extraction = scenario.target_state;
  return record;
}

Json GenerationStats::to_json() const {
  return Json{{"requested", requested}, {"produced", produced},     {"failed", failed},
              {"retries", retries},     {"op_kinds", op_kinds},     {"gain_ops", gain_ops},
              {"gain_shapes", gain_shapes}, {"slot_coverage", slot_coverage}};
}

namespace {

struct Slot {
  std::optional<IterChatRecord> record;
  std::vector<GainMixKind> op_kinds;
  bool failed = false;
};

GenerationStats tally(const std::vector<Slot>& slots, int requested, int retries) {
  GenerationStats stats;
  stats.requested = requested;
  stats.retries = retries;
  for (GainMixKind k : kAllKinds) stats.op_kinds[std::string(to_string(k))] = 0;
  stats.gain_ops = {{"add", 0}, {"remove", 0}};
  stats.gain_shapes = {{"add_only", 0}, {"remove_only", 0}, {"mixed", 0}};
  for (const Slot& s : slots) {
    if (s.failed) ++stats.failed;
    if (!s.record) continue;
    ++stats.produced;
    for (GainMixKind k : s.op_kinds) ++stats.op_kinds[std::string(to_string(k))];
    bool adds = false;
    bool removes = false;
    std::set<std::string> slots_touched;
    for (const GainOp& op : s.record->state_gain->ops) {
      ++stats.gain_ops[std::string(to_string(op.kind))];
      adds |= op.kind == GainKind::kAdd;
      removes |= op.kind == GainKind::kRemove;
      slots_touched.insert(op.slot);
    }
    for (const auto& name : slots_touched) ++stats.slot_coverage[name];
    ++stats.gain_shapes[adds && removes ? "mixed" : adds ? "add_only" : "remove_only"];
  }
  return stats;
}

}  // namespace

GenerationResult generate_dataset(const PreferenceSchema& schema, const SamplerConfig& config,
                                  Backend& backend, const PromptTemplates& prompts) {
  config.check();
  const int n = config.record_count;
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  std::atomic<int> failures{0};
  std::atomic<int> retries{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    for (int i = next++; i < n && !abort; i = next++) {
      try {
        SampledScenario sc = sample_scenario(schema, config, static_cast<std::uint64_t>(i));
        char id[64];
        std::snprintf(id, sizeof id, "syn-%llu-%06d", static_cast<unsigned long long>(config.seed), i);
        Slot& slot = slots[static_cast<std::size_t>(i)];
        slot.op_kinds = sc.op_kinds;
        for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
          try {
            slot.record = realize_record(sc, schema, backend, prompts, id);
            break;
          } catch (const RealizationError&) {
          } catch (const BackendError&) {
          }
          if (attempt < config.max_attempts) ++retries;
        }
        if (!slot.record) {
          slot.failed = true;
          if (static_cast<long>(++failures) * 10 >= n) abort = true;
        }
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      }
    }
  };

  const int jobs = std::min(config.jobs, n);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  GenerationResult result;
  result.stats = tally(slots, n, retries.load());
  for (Slot& s : slots) {
    if (s.record) result.records.push_back(std::move(*s.record));
  }
  if (abort) {
    throw GenerationAborted(std::to_string(result.stats.failed) + " of " + std::to_string(n) +
                                " records failed after " + std::to_string(config.max_attempts) +
                                " attempts each",
                            std::move(result));
  }
  return result;
}

}  // namespace iterchat
