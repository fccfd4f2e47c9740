#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "fixtures.h"
#include "iterchat/annotation.h"
#include "iterchat/io.h"

using namespace iterchat;
using namespace std::chrono_literals;

namespace {

PreferenceState S(std::initializer_list<std::pair<std::string, std::vector<std::string>>> init) {
  PreferenceState s;
  for (const auto& [slot, values] : init) s.add(slot, values);
  return s;
}

StateGain G(GainKind kind, std::string slot, std::vector<std::string> values = {}) {
  return StateGain{{{kind, std::move(slot), std::move(values)}}};
}

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> ms = std::make_shared<std::atomic<std::int64_t>>(1'700'000'000'000);
  Clock clock() const {
    auto p = ms;
    return [p] { return std::chrono::system_clock::time_point(std::chrono::milliseconds(p->load())); };
  }
  void advance(std::chrono::milliseconds d) const { *ms += d.count(); }
};

IterChatRecord record(const std::string& id, PreferenceState history, std::string user = "I like red.") {
  IterChatRecord r;
  r.record_id = id;
  r.history_preference = std::move(history);
  r.system_utterance = "Anything else?";
  r.user_utterance = std::move(user);
  return r;
}

struct Fixture {
  fixtures::TempDir dir;
  FakeClock clock;
  std::unique_ptr<AnnotationStore> store;

  Fixture() { reopen(); }
  StoreOptions options() const {
    StoreOptions o;
    o.journal_path = dir.file("journal.jsonl");
    o.lease_duration = 15min;
    o.clock = clock.clock();
    return o;
  }
  void reopen() {
    store.reset();
    store = std::make_unique<AnnotationStore>(fixtures::shop_schema(), options());
  }
};

}  // namespace

TEST(Annotation, EmptyQueueLeasesNothing) {
  Fixture f;
  EXPECT_FALSE(f.store->lease_next_task("ann"));
  f.store->create_dataset("empty", {});
  EXPECT_FALSE(f.store->lease_next_task("ann"));
  EXPECT_THROW(f.store->lease_next_task(""), AnnotationError);
}

TEST(Annotation, SubmitAcceptedDerivesExtraction) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", S({{"price", {"less than $50"}}}))});
  ASSERT_EQ(ids.size(), 1u);
  const auto task = f.store->lease_next_task("alice");
  ASSERT_TRUE(task);
  EXPECT_EQ(task->task_id, ids[0]);
  EXPECT_EQ(task->status, TaskStatus::kLeased);
  const SubmitResult r = f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"}));
  EXPECT_TRUE(r.accepted);
  EXPECT_TRUE(r.violations.empty());
  EXPECT_EQ(*r.derived_extraction, S({{"price", {"less than $50"}}, {"color", {"red"}}}));
  EXPECT_EQ(f.store->task(ids[0])->status, TaskStatus::kDone);
}

TEST(Annotation, RemoveOfAbsentBrandRejected) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", S({{"price", {"less than $50"}}}))});
  f.store->lease_next_task("alice");
  const std::size_t events = f.store->journal_events();
  const SubmitResult r = f.store->submit_annotation(ids[0], "alice", G(GainKind::kRemove, "brand", {"acme"}));
  EXPECT_FALSE(r.accepted);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].reason, "remove of absent value");
  EXPECT_EQ(r.violations[0].slot, "brand");
  EXPECT_EQ(r.violations[0].value, "acme");
  EXPECT_EQ(f.store->journal_events(), events);
  EXPECT_EQ(f.store->task(ids[0])->status, TaskStatus::kLeased);
  EXPECT_TRUE(f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "brand", {"acme"})).accepted);
}

TEST(Annotation, DuplicateSubmitAfterDone) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {})});
  f.store->lease_next_task("alice");
  ASSERT_TRUE(f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"})).accepted);
  const std::size_t events = f.store->journal_events();
  const std::string journal = read_file(f.options().journal_path);
  try {
    f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"blue"}));
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_STREQ(e.what(), "task already done");
    EXPECT_EQ(e.kind(), AnnotationError::Kind::kConflict);
  }
  EXPECT_EQ(f.store->journal_events(), events);
  EXPECT_EQ(read_file(f.options().journal_path), journal);
}

TEST(Annotation, SchemaViolations) {
  Fixture f;
  EXPECT_EQ(check_submission(fixtures::shop_schema(), {}, G(GainKind::kAdd, "rating", {"5"}))[0].reason, "unknown slot");
  EXPECT_EQ(check_submission(fixtures::shop_schema(), {}, G(GainKind::kAdd, "color", {"purple"}))[0].reason,
            "value not in schema_values");
  EXPECT_TRUE(check_submission(fixtures::shop_schema(), {}, G(GainKind::kAdd, "brand", {"initech"})).empty());
  const auto multi = check_submission(fixtures::shop_schema(), S({{"price", {"less than $50"}}}),
                                      G(GainKind::kAdd, "price", {"between $100 and $200"}));
  ASSERT_EQ(multi.size(), 1u);
  EXPECT_NE(multi[0].reason.find("single-valued"), std::string::npos);
  EXPECT_TRUE(check_submission(fixtures::shop_schema(), S({{"price", {"less than $50"}}}),
                               G(GainKind::kSet, "price", {"between $100 and $200"}))
                  .empty());
  const Json j = violation_to_json(multi[0]);
  EXPECT_EQ(j["slot"], "price");
  EXPECT_TRUE(j.contains("reason"));
  EXPECT_TRUE(j.contains("op_index"));
}

TEST(Annotation, LeaseOwnershipAndRegrant) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {}), record("r2", {})});
  const auto a = f.store->lease_next_task("alice");
  const auto again = f.store->lease_next_task("alice");
  EXPECT_EQ(a->task_id, again->task_id);
  const auto b = f.store->lease_next_task("bob");
  EXPECT_NE(b->task_id, a->task_id);
  EXPECT_FALSE(f.store->lease_next_task("carol"));
  try {
    f.store->submit_annotation(a->task_id, "bob", {});
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.kind(), AnnotationError::Kind::kConflict);
  }
  try {
    f.store->submit_annotation("nope", "bob", {});
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.kind(), AnnotationError::Kind::kNotFound);
  }
}

TEST(Annotation, ExpiredLeaseIsReleasable) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {})});
  ASSERT_TRUE(f.store->lease_next_task("alice"));
  EXPECT_FALSE(f.store->lease_next_task("bob"));
  f.clock.advance(15min - 1ms);
  EXPECT_FALSE(f.store->lease_next_task("bob"));
  f.clock.advance(1ms);
  EXPECT_EQ(f.store->task(ids[0])->status, TaskStatus::kOpen);
  const auto b = f.store->lease_next_task("bob");
  ASSERT_TRUE(b);
  EXPECT_EQ(b->lease->annotator_id, "bob");
  try {
    f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"}));
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.kind(), AnnotationError::Kind::kConflict);
  }
  EXPECT_TRUE(f.store->submit_annotation(ids[0], "bob", G(GainKind::kAdd, "color", {"red"})).accepted);
}

TEST(Annotation, SubmitAfterOwnLeaseExpiredIsRejected) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {})});
  f.store->lease_next_task("alice");
  f.clock.advance(16min);
  try {
    f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"}));
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_NE(std::string(e.what()).find("expired"), std::string::npos);
  }
}

TEST(Annotation, ConcurrentLeasesGrantEachTaskOnce) {
  Fixture f;
  std::vector<IterChatRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(record("r" + std::to_string(i), {}));
  f.store->create_dataset("ds", records);
  std::vector<std::optional<AnnotationTask>> got(32);
  std::vector<std::thread> threads;
  for (int i = 0; i < 32; ++i) {
    threads.emplace_back([&, i] { got[static_cast<std::size_t>(i)] = f.store->lease_next_task("a" + std::to_string(i)); });
  }
  for (auto& t : threads) t.join();
  std::set<std::string> granted;
  int grants = 0;
  for (const auto& g : got) {
    if (!g) continue;
    ++grants;
    granted.insert(g->task_id);
  }
  EXPECT_EQ(grants, 5);
  EXPECT_EQ(granted.size(), 5u);
}

TEST(Annotation, StatsMeanSeconds) {
  Fixture f;
  EXPECT_TRUE(f.store->compute_stats().per_annotator.empty());
  EXPECT_EQ(f.store->compute_stats().overall.completed, 0u);
  const auto ids = f.store->create_dataset("ds", {record("r1", {}), record("r2", {}), record("r3", {})});
  f.store->lease_next_task("alice");
  f.clock.advance(60s);
  f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"}));
  f.store->lease_next_task("alice");
  f.clock.advance(120s);
  f.store->submit_annotation(ids[1], "alice", G(GainKind::kAdd, "color", {"blue"}));
  f.store->lease_next_task("bob");
  f.clock.advance(30s);
  f.store->submit_annotation(ids[2], "bob", {});
  const AnnotationStats all = f.store->compute_stats();
  ASSERT_EQ(all.per_annotator.size(), 2u);
  EXPECT_EQ(all.per_annotator[0].annotator_id, "alice");
  EXPECT_EQ(all.per_annotator[0].completed, 2u);
  EXPECT_DOUBLE_EQ(all.per_annotator[0].mean_seconds, 90.0);
  EXPECT_DOUBLE_EQ(all.per_annotator[0].total_seconds, 180.0);
  EXPECT_DOUBLE_EQ(all.overall.mean_seconds, 70.0);
  const AnnotationStats bob = f.store->compute_stats("bob");
  ASSERT_EQ(bob.per_annotator.size(), 1u);
  EXPECT_EQ(bob.per_annotator[0].annotator_id, "bob");
  EXPECT_DOUBLE_EQ(bob.overall.mean_seconds, 30.0);
}

TEST(Annotation, ExportOnlyDoneTasksAndRevalidates) {
  Fixture f;
  std::vector<IterChatRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(record("r" + std::to_string(i), S({{"color", {"red"}}})));
  const auto ids = f.store->create_dataset("ds", records);
  EXPECT_TRUE(f.store->export_labels("ds").empty());
  for (int i = 0; i < 3; ++i) {
    const auto t = f.store->lease_next_task("alice");
    ASSERT_TRUE(f.store->submit_annotation(t->task_id, "alice", G(GainKind::kAdd, "brand", {"acme"})).accepted);
  }
  const auto out = f.store->export_labels("ds");
  ASSERT_EQ(out.size(), 3u);
  for (const auto& r : out) {
    EXPECT_TRUE(record_consistent(r, ApplyMode::kStrict)) << r.record_id;
    EXPECT_EQ(*r.preference_extraction, S({{"color", {"red"}}, {"brand", {"acme"}}}));
  }
  EXPECT_EQ(out[0].record_id, "r0");
  EXPECT_TRUE(f.store->export_labels("other").empty());
}

TEST(Annotation, PrefilledSuggestionAndEditedFlag) {
  Fixture f;
  IterChatRecord pre = record("r1", {});
  pre.state_gain = G(GainKind::kAdd, "color", {"red"});
  pre.preference_extraction = S({{"color", {"red"}}});
  IterChatRecord pre2 = pre;
  pre2.record_id = "r2";
  const auto ids = f.store->create_dataset("ds", {pre, pre2});
  const auto t = f.store->lease_next_task("alice");
  EXPECT_TRUE(t->prefilled());
  EXPECT_FALSE(t->record.state_gain) << "labels are stripped from the task record";
  EXPECT_EQ(t->to_json()["suggestion"][0]["slot"], "color");
  f.store->submit_annotation(t->task_id, "alice", *pre.state_gain);
  const auto t2 = f.store->lease_next_task("alice");
  f.store->submit_annotation(t2->task_id, "alice", G(GainKind::kAdd, "color", {"blue"}));
  const auto subs = f.store->submissions();
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_FALSE(subs[0].edited);
  EXPECT_TRUE(subs[1].edited);
}

TEST(Annotation, DatasetValidation) {
  Fixture f;
  f.store->create_dataset("ds", {record("r1", {})});
  EXPECT_THROW(f.store->create_dataset("ds", {record("r1", {})}), AnnotationError);
  EXPECT_THROW(f.store->create_dataset("a/b", {}), AnnotationError);
  EXPECT_THROW(f.store->create_dataset("", {}), AnnotationError);
  EXPECT_THROW(f.store->create_dataset("x", {record("r1", {}, "")}), AnnotationError);
  EXPECT_EQ(f.store->tasks("ds").size(), 1u);
  EXPECT_TRUE(f.store->tasks("x").empty());
}

TEST(Annotation, RestartReplaysJournal) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {}), record("r2", {}), record("r3", {})});
  f.store->lease_next_task("alice");
  f.clock.advance(60s);
  f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"}));
  f.store->lease_next_task("bob");
  const auto before_tasks = f.store->tasks();
  const auto before_stats = f.store->compute_stats();
  const std::size_t events = f.store->journal_events();
  f.reopen();
  EXPECT_EQ(f.store->journal_events(), events);
  const auto after_tasks = f.store->tasks();
  ASSERT_EQ(after_tasks.size(), before_tasks.size());
  for (std::size_t i = 0; i < after_tasks.size(); ++i) {
    EXPECT_EQ(after_tasks[i].to_json(), before_tasks[i].to_json());
  }
  EXPECT_TRUE(f.store->compute_stats() == before_stats);
  EXPECT_EQ(f.store->lease_next_task("bob")->task_id, ids[1]) << "bob's live lease survives restart";
  EXPECT_EQ(f.store->export_labels("ds").size(), 1u);
}

TEST(Annotation, TornTailIsTruncated) {
  Fixture f;
  const auto ids = f.store->create_dataset("ds", {record("r1", {}), record("r2", {})});
  f.store->lease_next_task("alice");
  const std::size_t events = f.store->journal_events();
  f.store.reset();
  const std::string path = f.options().journal_path;
  const std::string intact = read_file(path);
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"event":"submitted","at":1,"task_id":")";
  }
  f.reopen();
  EXPECT_EQ(f.store->journal_events(), events);
  EXPECT_EQ(read_file(path), intact);
  EXPECT_EQ(f.store->task(ids[0])->status, TaskStatus::kLeased);
  EXPECT_TRUE(f.store->submit_annotation(ids[0], "alice", G(GainKind::kAdd, "color", {"red"})).accepted);
  f.reopen();
  EXPECT_EQ(f.store->task(ids[0])->status, TaskStatus::kDone);
}

TEST(Annotation, MissingFinalNewlineKeepsEvent) {
  Fixture f;
  f.store->create_dataset("ds", {record("r1", {})});
  f.store->lease_next_task("alice");
  const std::size_t events = f.store->journal_events();
  f.store.reset();
  const std::string path = f.options().journal_path;
  std::string text = read_file(path);
  text.pop_back();
  write_file_atomic(path, text);
  f.reopen();
  EXPECT_EQ(f.store->journal_events(), events);
  EXPECT_EQ(read_file(path).back(), '\n');
  f.store->create_dataset("ds2", {record("r9", {})});
  f.reopen();
  EXPECT_EQ(f.store->tasks().size(), 2u);
}

TEST(Annotation, CorruptMiddleLineThrows) {
  Fixture f;
  f.store->create_dataset("ds", {record("r1", {})});
  f.store.reset();
  const std::string path = f.options().journal_path;
  write_file_atomic(path, "garbage\n" + read_file(path));
  EXPECT_THROW(f.reopen(), Error);
}
