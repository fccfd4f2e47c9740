#include "iterchat/annotation.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <map>
#include <cstring>
#include <set>

#include "iterchat/io.h"

namespace iterchat {

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::kOpen: return "open";
    case TaskStatus::kLeased: return "leased";
    case TaskStatus::kDone: return "done";
  }
  return "open";
}

Json violation_to_json(const GainViolation& v) {
  return Json{{"op_index", v.op_index}, {"slot", v.slot}, {"value", v.value}, {"reason", v.reason}};
}

Json AnnotationTask::to_json() const {
  Json out{{"task_id", task_id},
           {"dataset_id", dataset_id},
           {"status", to_string(status)},
           {"record", record_to_json(record)},
           {"prefilled", prefilled()},
           {"suggestion", suggestion ? gain_to_json(*suggestion) : Json(nullptr)},
           {"lease", nullptr}};
  if (lease) {
    out["lease"] = Json{{"annotator_id", lease->annotator_id},
                        {"granted_at", lease->granted_at},
                        {"expires_at", lease->expires_at}};
  }
  return out;
}

Json SubmitResult::to_json() const {
  Json violations_json = Json::array();
  for (const auto& v : violations) violations_json.push_back(violation_to_json(v));
  return Json{{"accepted", accepted},
              {"derived_extraction",
               derived_extraction ? state_to_json(*derived_extraction) : Json(nullptr)},
              {"violations", std::move(violations_json)}};
}

namespace {

Json annotator_json(const AnnotatorStats& s) {
  return Json{{"annotator_id", s.annotator_id},
              {"completed", s.completed},
              {"mean_seconds", s.mean_seconds},
              {"total_seconds", s.total_seconds}};
}

bool same(const AnnotatorStats& a, const AnnotatorStats& b) {
  return a.annotator_id == b.annotator_id && a.completed == b.completed &&
         a.mean_seconds == b.mean_seconds && a.total_seconds == b.total_seconds;
}

}  // namespace

Json AnnotationStats::to_json() const {
  Json rows = Json::array();
  for (const auto& s : per_annotator) rows.push_back(annotator_json(s));
  Json overall_json = annotator_json(overall);
  overall_json.erase("annotator_id");
  return Json{{"per_annotator", std::move(rows)}, {"overall", std::move(overall_json)}};
}

bool operator==(const AnnotationStats& a, const AnnotationStats& b) {
  if (a.per_annotator.size() != b.per_annotator.size() || !same(a.overall, b.overall)) return false;
  for (std::size_t i = 0; i < a.per_annotator.size(); ++i) {
    if (!same(a.per_annotator[i], b.per_annotator[i])) return false;
  }
  return true;
}

std::vector<GainViolation> check_submission(const PreferenceSchema& schema,
                                            const PreferenceState& history,
                                            const StateGain& gain) {
  CheckedApply applied = apply_gain_checked(history, gain);
  std::vector<GainViolation> out = std::move(applied.violations);
  std::set<std::string> touched;
  for (std::size_t i = 0; i < gain.ops.size(); ++i) {
    const GainOp& op = gain.ops[i];
    if (!op.well_formed()) continue;
    const SlotDefinition* def = schema.find_slot(op.slot);
    if (def == nullptr) {
      out.push_back({i, op.slot, "", "unknown slot"});
      continue;
    }
    touched.insert(def->name);
    if (op.kind != GainKind::kAdd && op.kind != GainKind::kSet) continue;
    if (def->allow_free_values) continue;
    for (const auto& v : op.values) {
      if (!def->find_value(v)) out.push_back({i, op.slot, v, "value not in schema_values"});
    }
  }
  for (const auto& name : touched) {
    const SlotDefinition* def = schema.find_slot(name);
    const auto* slot = applied.state.find(name);
    if (slot != nullptr && !def->multi_valued && slot->values.size() > 1) {
      out.push_back({gain.ops.empty() ? 0 : gain.ops.size() - 1, name, "",
                     "single-valued slot would hold " + std::to_string(slot->values.size()) +
                         " values"});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const GainViolation& a, const GainViolation& b) {
    return a.op_index < b.op_index;
  });
  return out;
}

// ---------------------------------------------------------------------------

struct AnnotationStore::Index {
  std::map<std::string, AnnotationTask> tasks;
  std::vector<std::string> order;  // creation order
  std::set<std::string> datasets;
  std::vector<AnnotationSubmission> submissions;
  std::size_t events = 0;
};

namespace {

Millis to_millis(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

std::string task_id_for(const std::string& dataset_id, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", n);
  return dataset_id + "-" + buf;
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("journal write failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

AnnotationStore::AnnotationStore(PreferenceSchema schema, StoreOptions options)
    : schema_(std::move(schema)), options_(std::move(options)), index_(std::make_unique<Index>()) {
  check_schema(schema_);
  if (options_.journal_path.empty()) throw Error("annotation store needs a journal path");
  if (options_.lease_duration.count() <= 0) throw Error("lease duration must be positive");
  if (!options_.clock) options_.clock = [] { return std::chrono::system_clock::now(); };
  load_journal();
  fd_ = ::open(options_.journal_path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error("cannot open journal '" + options_.journal_path + "': " + std::strerror(errno));
  }
}

AnnotationStore::~AnnotationStore() {
  if (fd_ >= 0) ::close(fd_);
}

Millis AnnotationStore::now() const { return to_millis(options_.clock()); }

void AnnotationStore::load_journal() {
  std::string text;
  try {
    text = read_file(options_.journal_path);
  } catch (const Error&) {
    return;  // no journal yet
  }
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) {
      // Final line without its newline: a write cut short by a crash.
      const Json event = Json::parse(text.substr(pos), nullptr, false);
      if (event.is_discarded() || !event.is_object()) {
        if (::truncate(options_.journal_path.c_str(), static_cast<off_t>(pos)) != 0) {
          throw Error("cannot truncate torn journal tail: " + std::string(std::strerror(errno)));
        }
      } else {
        apply_event(*index_, event);
        ++index_->events;
        const int fd = ::open(options_.journal_path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
        if (fd >= 0) {
          write_all(fd, "\n");
          ::close(fd);
        }
      }
      break;
    }
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const Json event = Json::parse(line, nullptr, false);
    if (event.is_discarded() || !event.is_object()) {
      throw Error(options_.journal_path + ":" + std::to_string(line_no) + ": corrupt journal event");
    }
    try {
      apply_event(*index_, event);
    } catch (const std::exception& e) {
      throw Error(options_.journal_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ++index_->events;
  }
}

void AnnotationStore::append(const Json& event) {
  write_all(fd_, event.dump() + "\n");
  if (options_.fsync) ::fdatasync(fd_);
  ++index_->events;
}

void AnnotationStore::apply_event(Index& index, const Json& event) const {
  const std::string kind = event.at("event").get<std::string>();
  if (kind == "dataset_created") {
    index.datasets.insert(event.at("dataset_id").get<std::string>());
  } else if (kind == "task_created") {
    AnnotationTask task;
    task.task_id = event.at("task_id").get<std::string>();
    task.dataset_id = event.at("dataset_id").get<std::string>();
    task.record = record_from_json(event.at("record"));
    if (event.contains("suggestion") && !event["suggestion"].is_null()) {
      task.suggestion = gain_from_json(event["suggestion"]);
    }
    index.order.push_back(task.task_id);
    index.tasks[task.task_id] = std::move(task);
  } else if (kind == "leased") {
    AnnotationTask& task = index.tasks.at(event.at("task_id").get<std::string>());
    task.status = TaskStatus::kLeased;
    task.lease = Lease{event.at("annotator_id").get<std::string>(), event.at("at").get<Millis>(),
                       event.at("expires_at").get<Millis>()};
  } else if (kind == "submitted") {
    AnnotationTask& task = index.tasks.at(event.at("task_id").get<std::string>());
    AnnotationSubmission s;
    s.task_id = task.task_id;
    s.annotator_id = event.at("annotator_id").get<std::string>();
    s.state_gain = gain_from_json(event.at("state_gain"));
    s.started_at = event.at("started_at").get<Millis>();
    s.submitted_at = event.at("at").get<Millis>();
    if (event.contains("client_started_at") && !event["client_started_at"].is_null()) {
      s.client_started_at = event["client_started_at"].get<Millis>();
    }
    s.derived_extraction = state_from_json(event.at("derived_extraction"));
    s.edited = event.value("edited", true);
    task.status = TaskStatus::kDone;
    task.lease.reset();
    index.submissions.push_back(std::move(s));
  } else {
    throw Error("unknown journal event '" + kind + "'");
  }
}

bool AnnotationStore::lease_live(const AnnotationTask& task, Millis at) const {
  return task.status == TaskStatus::kLeased && task.lease && at < task.lease->expires_at;
}

namespace {

// A leased task whose lease has run out reads as open.
AnnotationTask view_at(const AnnotationTask& task, Millis at) {
  AnnotationTask out = task;
  if (out.status == TaskStatus::kLeased && (!out.lease || at >= out.lease->expires_at)) {
    out.status = TaskStatus::kOpen;
    out.lease.reset();
  }
  return out;
}

}  // namespace

std::vector<std::string> AnnotationStore::create_dataset(const std::string& dataset_id,
                                                         const std::vector<IterChatRecord>& records) {
  if (dataset_id.empty() || dataset_id.find_first_of("/ \t\n") != std::string::npos) {
    throw AnnotationError(AnnotationError::Kind::kBadRequest,
                          "dataset_id must be non-empty without '/' or whitespace");
  }
  for (const auto& r : records) {
    if (r.user_utterance.empty()) {
      throw AnnotationError(AnnotationError::Kind::kBadRequest,
                            "record '" + r.record_id + "' has an empty user utterance");
    }
  }
  std::unique_lock lock(mutex_);
  if (index_->datasets.count(dataset_id) > 0) {
    throw AnnotationError(AnnotationError::Kind::kConflict,
                          "dataset '" + dataset_id + "' already exists");
  }
  const Millis at = now();
  std::vector<Json> events;
  events.push_back(Json{{"event", "dataset_created"}, {"at", at}, {"dataset_id", dataset_id}});
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string id = task_id_for(dataset_id, i + 1);
    if (index_->tasks.count(id) > 0) {
      throw AnnotationError(AnnotationError::Kind::kConflict, "task id '" + id + "' already exists");
    }
    const IterChatRecord& r = records[i];
    events.push_back(Json{{"event", "task_created"},
                          {"at", at},
                          {"task_id", id},
                          {"dataset_id", dataset_id},
                          {"record", record_to_json(r.unlabeled())},
                          {"suggestion", r.state_gain ? gain_to_json(*r.state_gain) : Json(nullptr)}});
    ids.push_back(id);
  }
  // A single write, so a killed process leaves either all events or none.
  std::string batch;
  for (const auto& e : events) batch += e.dump() + "\n";
  write_all(fd_, batch);
  if (options_.fsync) ::fdatasync(fd_);
  for (const auto& e : events) {
    apply_event(*index_, e);
    ++index_->events;
  }
  return ids;
}

std::optional<AnnotationTask> AnnotationStore::lease_next_task(const std::string& annotator_id) {
  if (annotator_id.empty()) {
    throw AnnotationError(AnnotationError::Kind::kBadRequest, "annotator_id must be non-empty");
  }
  std::unique_lock lock(mutex_);
  const Millis at = now();
  for (const auto& id : index_->order) {
    const AnnotationTask& task = index_->tasks.at(id);
    if (lease_live(task, at) && task.lease->annotator_id == annotator_id) return task;
  }
  for (const auto& id : index_->order) {
    const AnnotationTask& task = index_->tasks.at(id);
    if (task.status == TaskStatus::kDone || lease_live(task, at)) continue;
    const Json event{{"event", "leased"},
                     {"at", at},
                     {"task_id", id},
                     {"annotator_id", annotator_id},
                     {"expires_at", at + options_.lease_duration.count()}};
    append(event);
    apply_event(*index_, event);
    return index_->tasks.at(id);
  }
  return std::nullopt;
}

SubmitResult AnnotationStore::submit_annotation(const std::string& task_id,
                                                const std::string& annotator_id,
                                                const StateGain& gain,
                                                std::optional<Millis> client_started_at) {
  std::unique_lock lock(mutex_);
  auto it = index_->tasks.find(task_id);
  if (it == index_->tasks.end()) {
    throw AnnotationError(AnnotationError::Kind::kNotFound, "unknown task '" + task_id + "'");
  }
  const AnnotationTask& task = it->second;
  if (task.status == TaskStatus::kDone) {
    throw AnnotationError(AnnotationError::Kind::kConflict, "task already done");
  }
  const Millis at = now();
  if (!task.lease || task.lease->annotator_id != annotator_id) {
    throw AnnotationError(AnnotationError::Kind::kConflict,
                          "task '" + task_id + "' is not leased by '" + annotator_id + "'");
  }
  if (!lease_live(task, at)) {
    throw AnnotationError(AnnotationError::Kind::kConflict, "lease on task '" + task_id + "' expired");
  }
  SubmitResult result;
  result.violations = check_submission(schema_, task.record.history_preference, gain);
  if (!result.violations.empty()) return result;

  const PreferenceState derived =
      apply_gain(task.record.history_preference, gain, ApplyMode::kStrict);
  const Json event{{"event", "submitted"},
                   {"at", std::max(at, task.lease->granted_at)},
                   {"task_id", task_id},
                   {"annotator_id", annotator_id},
                   {"state_gain", gain_to_json(gain)},
                   {"started_at", task.lease->granted_at},
                   {"client_started_at", client_started_at ? Json(*client_started_at) : Json(nullptr)},
                   {"derived_extraction", state_to_json(derived)},
                   {"edited", !(task.suggestion && *task.suggestion == gain)}};
  append(event);
  apply_event(*index_, event);
  result.accepted = true;
  result.derived_extraction = derived;
  return result;
}

AnnotationStats AnnotationStore::compute_stats(const std::optional<std::string>& annotator_id) const {
  std::shared_lock lock(mutex_);
  std::map<std::string, AnnotatorStats> rows;
  AnnotationStats stats;
  for (const auto& s : index_->submissions) {
    if (annotator_id && s.annotator_id != *annotator_id) continue;
    AnnotatorStats& row = rows[s.annotator_id];
    row.annotator_id = s.annotator_id;
    ++row.completed;
    row.total_seconds += s.seconds();
    ++stats.overall.completed;
    stats.overall.total_seconds += s.seconds();
  }
  for (auto& [id, row] : rows) {
    row.mean_seconds = row.total_seconds / static_cast<double>(row.completed);
    stats.per_annotator.push_back(row);
  }
  if (stats.overall.completed > 0) {
    stats.overall.mean_seconds =
        stats.overall.total_seconds / static_cast<double>(stats.overall.completed);
  }
  return stats;
}

std::vector<IterChatRecord> AnnotationStore::export_labels(const std::string& dataset_id) const {
  std::shared_lock lock(mutex_);
  std::map<std::string, const AnnotationSubmission*> by_task;
  for (const auto& s : index_->submissions) by_task[s.task_id] = &s;
  std::vector<IterChatRecord> out;
  for (const auto& id : index_->order) {
    const AnnotationTask& task = index_->tasks.at(id);
    if (task.dataset_id != dataset_id || task.status != TaskStatus::kDone) continue;
    const AnnotationSubmission& s = *by_task.at(id);
    IterChatRecord r = task.record;
    r.state_gain = s.state_gain;
    r.preference_extraction = s.derived_extraction;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AnnotationTask> AnnotationStore::tasks(const std::optional<std::string>& dataset_id) const {
  std::shared_lock lock(mutex_);
  const Millis at = now();
  std::vector<AnnotationTask> out;
  for (const auto& id : index_->order) {
    const AnnotationTask& task = index_->tasks.at(id);
    if (dataset_id && task.dataset_id != *dataset_id) continue;
    out.push_back(view_at(task, at));
  }
  return out;
}

std::optional<AnnotationTask> AnnotationStore::task(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  auto it = index_->tasks.find(task_id);
  if (it == index_->tasks.end()) return std::nullopt;
  return view_at(it->second, now());
}

std::vector<AnnotationSubmission> AnnotationStore::submissions() const {
  std::shared_lock lock(mutex_);
  return index_->submissions;
}

std::size_t AnnotationStore::journal_events() const {
  std::shared_lock lock(mutex_);
  return index_->events;
}

}  // namespace iterchat
