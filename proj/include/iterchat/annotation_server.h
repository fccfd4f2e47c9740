#pragma once

#include <memory>
#include <optional>
#include <string>

namespace iterchat {

class AnnotationStore;

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::string> ui_dir;  // static bundle mounted at /
};

// HTTP+JSON front of an AnnotationStore:
//   GET  /api/schema
//   POST /api/datasets?dataset_id=ID      body: unlabeled IterChatRecord JSONL
//   POST /api/tasks/lease                 {"annotator_id"}
//   POST /api/tasks/{id}/submit           {"annotator_id", "state_gain", "started_at"?}
//   GET  /api/tasks?dataset_id=ID
//   GET  /api/stats?annotator_id=ID
//   GET  /api/export/{dataset_id}         labeled IterChatRecord JSONL
// Errors are {"error", "detail"} with a 4xx/5xx status.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServerOptions options);
  ~AnnotationServer();

  // Binds and returns the bound port; throws Error on failure.
  int bind();
  // Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace iterchat
