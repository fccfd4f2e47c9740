#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "iterchat/dataset.h"
#include "iterchat/error.h"
#include "iterchat/json.h"
#include "iterchat/schema.h"
#include "iterchat/state.h"

namespace iterchat {

using Clock = std::function<std::chrono::system_clock::time_point()>;

// Milliseconds since the Unix epoch; the journal's time unit.
using Millis = std::int64_t;

enum class TaskStatus { kOpen, kLeased, kDone };

std::string_view to_string(TaskStatus status);

struct Lease {
  std::string annotator_id;
  Millis granted_at = 0;
  Millis expires_at = 0;
};

struct AnnotationTask {
  std::string task_id;
  std::string dataset_id;
  IterChatRecord record;                // labels stripped
  std::optional<StateGain> suggestion;  // machine prefill, if the upload had one
  TaskStatus status = TaskStatus::kOpen;
  std::optional<Lease> lease;

  bool prefilled() const { return suggestion.has_value(); }
  Json to_json() const;
};

struct AnnotationSubmission {
  std::string task_id;
  std::string annotator_id;
  StateGain state_gain;
  Millis started_at = 0;    // server: lease grant
  Millis submitted_at = 0;  // server: submit time
  std::optional<Millis> client_started_at;
  PreferenceState derived_extraction;
  bool edited = true;  // false when a prefilled suggestion was accepted unchanged

  double seconds() const { return static_cast<double>(submitted_at - started_at) / 1000.0; }
};

struct SubmitResult {
  bool accepted = false;
  std::optional<PreferenceState> derived_extraction;
  std::vector<GainViolation> violations;

  Json to_json() const;
};

struct AnnotatorStats {
  std::string annotator_id;
  std::size_t completed = 0;
  double mean_seconds = 0.0;
  double total_seconds = 0.0;
};

struct AnnotationStats {
  std::vector<AnnotatorStats> per_annotator;  // sorted by annotator_id
  AnnotatorStats overall;                     // annotator_id empty

  Json to_json() const;
  friend bool operator==(const AnnotationStats& a, const AnnotationStats& b);
};

class AnnotationError : public Error {
 public:
  enum class Kind { kBadRequest, kNotFound, kConflict };
  AnnotationError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct StoreOptions {
  std::string journal_path;
  std::chrono::milliseconds lease_duration{std::chrono::minutes(15)};
  bool fsync = false;
  Clock clock;  // defaults to system_clock::now
};

// Task queue backed by an append-only JSONL journal of events
// (dataset_created, task_created, leased, submitted). The in-memory index
// is rebuilt from the journal on construction. A torn final line left by a
// crash is discarded and truncated away; corruption elsewhere throws.
class AnnotationStore {
 public:
  AnnotationStore(PreferenceSchema schema, StoreOptions options);
  ~AnnotationStore();

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  const PreferenceSchema& schema() const { return schema_; }

  // Creates one open task per record, in order. Records carrying a
  // state_gain become prefilled suggestions. Returns the created task ids.
  std::vector<std::string> create_dataset(const std::string& dataset_id,
                                          const std::vector<IterChatRecord>& records);

  // The oldest open or lease-expired task, now leased to `annotator_id`.
  // An annotator that still holds a live lease gets that task back.
  std::optional<AnnotationTask> lease_next_task(const std::string& annotator_id);

  // Validates the gain strictly against the task's history and schema.
  // Rejections leave the task leased. Throws AnnotationError for unknown
  // tasks, tasks not leased by the caller and tasks already done.
  SubmitResult submit_annotation(const std::string& task_id, const std::string& annotator_id,
                                 const StateGain& gain,
                                 std::optional<Millis> client_started_at = std::nullopt);

  AnnotationStats compute_stats(const std::optional<std::string>& annotator_id = {}) const;

  // Labeled records for every done task of the dataset, in task order.
  std::vector<IterChatRecord> export_labels(const std::string& dataset_id) const;

  std::vector<AnnotationTask> tasks(const std::optional<std::string>& dataset_id = {}) const;
  std::optional<AnnotationTask> task(const std::string& task_id) const;
  std::vector<AnnotationSubmission> submissions() const;
  std::size_t journal_events() const;

 private:
  struct Index;

  Millis now() const;
  void append(const Json& event);
  void apply_event(Index& index, const Json& event) const;
  void load_journal();
  bool lease_live(const AnnotationTask& task, Millis at) const;

  PreferenceSchema schema_;
  StoreOptions options_;
  mutable std::shared_mutex mutex_;
  std::unique_ptr<Index> index_;
  int fd_ = -1;
};

// Strict-mode and schema checks used by submit_annotation.
std::vector<GainViolation> check_submission(const PreferenceSchema& schema,
                                            const PreferenceState& history,
                                            const StateGain& gain);

Json violation_to_json(const GainViolation& violation);

}  // namespace iterchat
