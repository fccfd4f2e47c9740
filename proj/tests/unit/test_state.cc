#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.h"
#include "iterchat/state.h"
#include "iterchat/text.h"
#include "oracles.h"

using namespace iterchat;

namespace {

PreferenceState S(std::initializer_list<std::pair<std::string, std::vector<std::string>>> init) {
  PreferenceState s;
  for (const auto& [slot, values] : init) s.add(slot, values);
  return s;
}

GainOp op(GainKind kind, std::string slot, std::vector<std::string> values = {}) {
  return {kind, std::move(slot), std::move(values)};
}

}  // namespace

TEST(PreferenceState, EmptySlotsAreDropped) {
  PreferenceState s = S({{"a", {"x"}}});
  EXPECT_EQ(s.remove("a", {"x"}), 1u);
  EXPECT_FALSE(s.has_slot("a"));
  EXPECT_TRUE(s.empty());
}

TEST(PreferenceState, ValuesUniqueUnderNormalization) {
  PreferenceState s;
  EXPECT_EQ(s.add("Color", {"Red", " red ", "RED", "blue"}), 2u);
  ASSERT_NE(s.find("color"), nullptr);
  EXPECT_EQ(s.find("color")->values, (std::vector<std::string>{"Red", "blue"}));
  EXPECT_EQ(s.find("color")->name, "Color");
  EXPECT_EQ(s.pair_count(), 2u);
}

TEST(PreferenceState, BlankSlotOrValueRejected) {
  PreferenceState s;
  EXPECT_THROW(s.add("  ", "x"), Error);
  EXPECT_THROW(s.add("a", "\t"), Error);
}

TEST(ApplyGain, AddToHistoryFromExample) {
  const PreferenceState history = S({{"price", {"less than $50"}}});
  const StateGain gain{{op(GainKind::kAdd, "color", {"red"})}};
  const PreferenceState out = apply_gain(history, gain, ApplyMode::kStrict);
  EXPECT_EQ(canonicalize(out), "color=[red]; price=[less than $50]");
  EXPECT_EQ(canonicalize(history), "price=[less than $50]") << "input must not be mutated";
}

TEST(ApplyGain, EmptyGainIsIdentity) {
  const PreferenceState s = S({{"a", {"x", "y"}}, {"b", {"z"}}});
  EXPECT_EQ(apply_gain(s, {}, ApplyMode::kStrict), s);
  EXPECT_EQ(apply_gain(s, {}, ApplyMode::kLenient), s);
}

TEST(ApplyGain, RemovingEveryValueDropsSlot) {
  const PreferenceState s = S({{"a", {"x", "y"}}});
  const StateGain g{{op(GainKind::kRemove, "a", {"x"}), op(GainKind::kRemove, "a", {"y"})}};
  const PreferenceState out = apply_gain(s, g, ApplyMode::kStrict);
  EXPECT_TRUE(out.empty());
  EXPECT_EQ(canonicalize(out), "");
}

TEST(ApplyGain, AddIsIdempotent) {
  const PreferenceState s = S({{"a", {"x"}}});
  const StateGain g{{op(GainKind::kAdd, "A", {"X", "x"})}};
  EXPECT_EQ(apply_gain(s, g, ApplyMode::kStrict), s);
}

TEST(ApplyGain, SetReplacesAndClearDrops) {
  const PreferenceState s = S({{"a", {"x", "y"}}, {"b", {"z"}}});
  const StateGain g{{op(GainKind::kSet, "a", {"w"}), op(GainKind::kClear, "b")}};
  EXPECT_EQ(canonicalize(apply_gain(s, g, ApplyMode::kStrict)), "a=[w]");
}

TEST(ApplyGain, StrictRejectsRemoveOfAbsentValue) {
  const PreferenceState s = S({{"a", {"x"}}});
  const StateGain g{{op(GainKind::kRemove, "a", {"q"})}};
  try {
    apply_gain(s, g, ApplyMode::kStrict);
    FAIL() << "expected GainError";
  } catch (const GainError& e) {
    EXPECT_EQ(e.violation().slot, "a");
    EXPECT_EQ(e.violation().value, "q");
    EXPECT_EQ(e.violation().reason, "remove of absent value");
    EXPECT_NE(std::string(e.what()).find("'q'"), std::string::npos);
  }
  EXPECT_EQ(apply_gain(s, g, ApplyMode::kLenient), s);
}

TEST(ApplyGain, StrictRejectsRemoveOrClearOfAbsentSlot) {
  const PreferenceState s = S({{"a", {"x"}}});
  EXPECT_THROW(apply_gain(s, {{op(GainKind::kRemove, "brand", {"acme"})}}, ApplyMode::kStrict), GainError);
  EXPECT_THROW(apply_gain(s, {{op(GainKind::kClear, "brand")}}, ApplyMode::kStrict), GainError);
  EXPECT_EQ(apply_gain(s, {{op(GainKind::kClear, "brand")}}, ApplyMode::kLenient), s);
}

TEST(ApplyGain, MalformedOpsAreViolations) {
  const PreferenceState s;
  EXPECT_FALSE(op(GainKind::kAdd, "a").well_formed());
  EXPECT_FALSE(op(GainKind::kClear, "a", {"x"}).well_formed());
  EXPECT_FALSE(op(GainKind::kAdd, " ", {"x"}).well_formed());
  const CheckedApply r = apply_gain_checked(s, {{op(GainKind::kAdd, "a"), op(GainKind::kAdd, "b", {"y"})}});
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].reason, "malformed op");
  EXPECT_EQ(canonicalize(r.state), "b=[y]");
}

TEST(ApplyGain, CheckedReportsEveryViolation) {
  const PreferenceState s = S({{"a", {"x"}}});
  const CheckedApply r = apply_gain_checked(
      s, {{op(GainKind::kRemove, "a", {"q", "r"}), op(GainKind::kClear, "zz"), op(GainKind::kAdd, "b", {"y"})}});
  EXPECT_EQ(r.violations.size(), 3u);
  EXPECT_EQ(canonicalize(r.state), "a=[x]; b=[y]");
}

TEST(ApplyGain, MatchesSetAlgebraOracle) {
  std::mt19937_64 rng(11);
  const auto schema = fixtures::ten_slot_schema();
  const char* kinds[] = {"add", "remove", "set", "clear"};
  for (int trial = 0; trial < 2000; ++trial) {
    const PreferenceState start = fixtures::random_state(rng, schema, 5);
    StateGain gain;
    const int n = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int i = 0; i < n; ++i) {
      const auto kind = *parse_gain_kind(kinds[std::uniform_int_distribution<int>(0, 3)(rng)]);
      GainOp o{kind, "s" + std::to_string(std::uniform_int_distribution<int>(0, 5)(rng)), {}};
      if (kind != GainKind::kClear) {
        const int k = std::uniform_int_distribution<int>(1, 3)(rng);
        for (int j = 0; j < k; ++j) o.values.push_back("V" + std::to_string(std::uniform_int_distribution<int>(0, 5)(rng)));
      }
      gain.ops.push_back(o);
    }
    const auto expected = oracle::apply(fixtures::to_set_state(start), fixtures::to_ops(gain));
    const PreferenceState lenient = apply_gain(start, gain, ApplyMode::kLenient);
    ASSERT_EQ(fixtures::to_set_state(lenient), expected) << "trial " << trial;
    const bool violation = oracle::strict_violation(fixtures::to_set_state(start), fixtures::to_ops(gain));
    if (violation) {
      ASSERT_THROW(apply_gain(start, gain, ApplyMode::kStrict), GainError) << "trial " << trial;
    } else {
      ASSERT_EQ(apply_gain(start, gain, ApplyMode::kStrict), lenient) << "trial " << trial;
    }
  }
}

TEST(DiffStates, AddedSlotFromExample) {
  const PreferenceState from = S({{"price", {"less than $50"}}});
  const PreferenceState to = S({{"price", {"less than $50"}}, {"color", {"red"}}});
  const StateGain g = diff_states(from, to);
  ASSERT_EQ(g.ops.size(), 1u);
  EXPECT_EQ(g.ops[0], op(GainKind::kAdd, "color", {"red"}));
}

TEST(DiffStates, ReflexiveIsEmpty) {
  const PreferenceState s = S({{"a", {"x", "y"}}, {"b", {"z"}}});
  EXPECT_TRUE(diff_states(s, s).empty());
  EXPECT_TRUE(diff_states(S({{"A", {"X"}}}), S({{"a", {"x"}}})).empty());
}

TEST(DiffStates, ValueSwapIsAddThenRemove) {
  const StateGain g = diff_states(S({{"a", {"x"}}}), S({{"a", {"y"}}}));
  ASSERT_EQ(g.ops.size(), 2u);
  EXPECT_EQ(g.ops[0], op(GainKind::kAdd, "a", {"y"}));
  EXPECT_EQ(g.ops[1], op(GainKind::kRemove, "a", {"x"}));
  EXPECT_EQ(apply_gain(S({{"a", {"x"}}}), g, ApplyMode::kStrict), S({{"a", {"y"}}}));
}

TEST(DiffStates, RoundTripCanonicalAndMinimal) {
  std::mt19937_64 rng(5);
  const auto schema = fixtures::ten_slot_schema();
  for (int trial = 0; trial < 1000; ++trial) {
    const PreferenceState from = fixtures::random_state(rng, schema, 6);
    const PreferenceState to = fixtures::random_state(rng, schema, 6);
    const StateGain g = diff_states(from, to);
    ASSERT_EQ(apply_gain(from, g, ApplyMode::kStrict), to);
    ASSERT_EQ(g.empty(), states_equal(from, to));
    std::string last_slot;
    std::map<std::string, std::pair<int, int>> per_slot;
    for (const GainOp& o : g.ops) {
      ASSERT_TRUE(o.kind == GainKind::kAdd || o.kind == GainKind::kRemove);
      const std::string key = normalize(o.slot);
      ASSERT_LE(last_slot, key) << "slots must be in sorted order";
      last_slot = key;
      auto& [adds, removes] = per_slot[key];
      if (o.kind == GainKind::kAdd) {
        ASSERT_EQ(removes, 0) << "ADD precedes REMOVE";
        ++adds;
      } else {
        ++removes;
      }
      ASSERT_TRUE(std::is_sorted(o.values.begin(), o.values.end(),
                                 [](const auto& a, const auto& b) { return normalize(a) < normalize(b); }));
      for (const auto& v : o.values) {
        // Every value named changes membership.
        ASSERT_NE(from.contains(o.slot, v), to.contains(o.slot, v));
      }
    }
    for (const auto& [slot, counts] : per_slot) {
      ASSERT_LE(counts.first, 1);
      ASSERT_LE(counts.second, 1);
    }
  }
}

TEST(DiffStates, SetEqualsDiffTowardSlot) {
  std::mt19937_64 rng(9);
  const auto schema = fixtures::ten_slot_schema();
  for (int trial = 0; trial < 500; ++trial) {
    const PreferenceState s = fixtures::random_state(rng, schema, 5);
    const std::string slot = "s" + std::to_string(std::uniform_int_distribution<int>(0, 9)(rng));
    std::vector<std::string> values{"v" + std::to_string(std::uniform_int_distribution<int>(0, 5)(rng))};
    PreferenceState target = s;
    target.clear(slot);
    target.add(slot, values);
    StateGain restricted;
    for (const GainOp& o : diff_states(s, target).ops) {
      if (normalize(o.slot) == slot) restricted.ops.push_back(o);
    }
    ASSERT_EQ(apply_gain(s, {{op(GainKind::kSet, slot, values)}}, ApplyMode::kStrict),
              apply_gain(s, restricted, ApplyMode::kStrict));
  }
}

TEST(Canonicalize, Examples) {
  EXPECT_EQ(canonicalize(PreferenceState{}), "");
  EXPECT_EQ(canonicalize(S({{"price", {"less than $50"}}, {"color", {"red"}}})),
            "color=[red]; price=[less than $50]");
  EXPECT_EQ(canonicalize(S({{"a", {"z", "B", "c"}}})), "a=[b,c,z]");
}

TEST(Canonicalize, InsertionOrderDoesNotMatter) {
  std::mt19937_64 rng(3);
  const auto schema = fixtures::ten_slot_schema();
  for (int trial = 0; trial < 300; ++trial) {
    const PreferenceState s = fixtures::random_state(rng, schema, 6);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [k, slot] : s.slots()) {
      for (const auto& v : slot.values) pairs.emplace_back(slot.name, v);
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    PreferenceState shuffled;
    for (const auto& [slot, v] : pairs) shuffled.add(slot, v);
    ASSERT_EQ(canonicalize(shuffled), canonicalize(s));
    ASSERT_EQ(canonicalize(s), oracle::format(fixtures::to_set_state(s)));
  }
}

TEST(Canonicalize, FormatCharactersAreEscaped) {
  const PreferenceState one = S({{"a", {"b,c"}}});
  const PreferenceState two = S({{"a", {"b", "c"}}});
  EXPECT_NE(canonicalize(one), canonicalize(two));
  EXPECT_EQ(canonicalize(one), "a=[b\\,c]");
  EXPECT_EQ(canonicalize(S({{"x=y", {"[1]; 2\\"}}})), oracle::format({{"x=y", {"[1]; 2\\"}}}));
}

TEST(StatesEqual, Examples) {
  EXPECT_TRUE(states_equal({}, {}));
  EXPECT_TRUE(states_equal(S({{"price", {"Less Than $50"}}}), S({{"price", {"less than $50"}}})));
  EXPECT_FALSE(states_equal(S({{"price", {"less than $50"}}}), S({{"price", {"between $100 and $200"}}})));
}

TEST(StateJson, RoundTrip) {
  const PreferenceState s = S({{"price", {"less than $50"}}, {"color", {"red", "blue"}}});
  EXPECT_EQ(state_from_json(state_to_json(s)), s);
  EXPECT_EQ(state_to_json(s).dump(), R"({"color":["red","blue"],"price":["less than $50"]})");
  EXPECT_TRUE(state_from_json(Json::parse(R"({"a": []})")).empty());
  EXPECT_THROW(state_from_json(Json::parse(R"({"a": "x"})")), FormatError);
  EXPECT_THROW(state_from_json(Json::parse(R"([1])")), FormatError);
}

TEST(GainJson, RoundTripAndErrors) {
  const StateGain g{{op(GainKind::kAdd, "color", {"red"}), op(GainKind::kClear, "price")}};
  EXPECT_EQ(gain_to_json(g).dump(),
            R"([{"op":"add","slot":"color","values":["red"]},{"op":"clear","slot":"price","values":[]}])");
  EXPECT_EQ(gain_from_json(gain_to_json(g)), g);
  EXPECT_EQ(gain_from_json(Json::parse(R"([{"op":"CLEAR","slot":"p"}])")).ops[0].kind, GainKind::kClear);
  EXPECT_THROW(gain_from_json(Json::parse(R"([{"op":"upsert","slot":"a","values":["x"]}])")), FormatError);
  EXPECT_THROW(gain_from_json(Json::parse(R"([{"op":"add","slot":"a","values":[]}])")), FormatError);
  EXPECT_THROW(gain_from_json(Json::parse(R"([{"op":"add","values":["x"]}])")), FormatError);
  EXPECT_THROW(gain_from_json(Json::parse(R"({"op":"add"})")), FormatError);
}
