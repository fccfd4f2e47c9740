#include "iterchat/annotation_server.h"

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "iterchat/annotation.h"
#include "iterchat/dataset.h"
#include "iterchat/schema.h"

namespace iterchat {

namespace {

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, std::string_view error, std::string_view detail) {
  send_json(res, status, Json{{"error", error}, {"detail", detail}});
}

Json parse_body(const httplib::Request& req) {
  Json body = Json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw FormatError("request body must be a JSON object");
  return body;
}

std::string required_string(const Json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw FormatError(std::string("'") + key + "' must be a non-empty string");
  }
  return it->get<std::string>();
}

// Runs a handler and maps store and parse errors onto HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const AnnotationError& e) {
      switch (e.kind()) {
        case AnnotationError::Kind::kBadRequest: send_error(res, 400, "bad_request", e.what()); break;
        case AnnotationError::Kind::kNotFound: send_error(res, 404, "not_found", e.what()); break;
        case AnnotationError::Kind::kConflict: send_error(res, 409, "conflict", e.what()); break;
      }
    } catch (const FormatError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct AnnotationServer::Impl {
  AnnotationStore& store;
  ServerOptions options;
  httplib::Server server;
  bool bound = false;

  Impl(AnnotationStore& s, ServerOptions o) : store(s), options(std::move(o)) {}

  void routes() {
    server.Get("/api/schema", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, schema_to_json(store.schema()));
    }));

    server.Post("/api/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("dataset_id")) throw FormatError("query parameter 'dataset_id' is required");
      const std::string dataset_id = req.get_param_value("dataset_id");
      const auto records = parse_records_jsonl(req.body);
      const auto ids = store.create_dataset(dataset_id, records);
      send_json(res, 201, Json{{"dataset_id", dataset_id}, {"task_count", ids.size()}, {"task_ids", ids}});
    }));

    server.Post("/api/tasks/lease", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      const auto task = store.lease_next_task(required_string(body, "annotator_id"));
      send_json(res, 200, Json{{"task", task ? task->to_json() : Json(nullptr)}});
    }));

    server.Post(R"(/api/tasks/([^/]+)/submit)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const Json body = parse_body(req);
                  const std::string annotator = required_string(body, "annotator_id");
                  if (!body.contains("state_gain")) throw FormatError("'state_gain' is required");
                  const StateGain gain = gain_from_json(body["state_gain"]);
                  std::optional<Millis> started;
                  if (body.contains("started_at") && !body["started_at"].is_null()) {
                    started = body["started_at"].get<Millis>();
                  }
                  const SubmitResult result =
                      store.submit_annotation(req.matches[1], annotator, gain, started);
                  send_json(res, 200, result.to_json());
                }));

    server.Get("/api/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> dataset;
      if (req.has_param("dataset_id")) dataset = req.get_param_value("dataset_id");
      Json tasks = Json::array();
      for (const auto& t : store.tasks(dataset)) tasks.push_back(t.to_json());
      send_json(res, 200, Json{{"tasks", std::move(tasks)}});
    }));

    server.Get("/api/stats", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> annotator;
      if (req.has_param("annotator_id") && !req.get_param_value("annotator_id").empty()) {
        annotator = req.get_param_value("annotator_id");
      }
      send_json(res, 200, store.compute_stats(annotator).to_json());
    }));

    server.Get(R"(/api/export/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 res.status = 200;
                 res.set_content(records_to_jsonl(store.export_labels(req.matches[1])),
                                 "application/x-ndjson");
               }));

    if (options.ui_dir && !server.set_mount_point("/", *options.ui_dir)) {
      throw Error("ui directory '" + *options.ui_dir + "' does not exist");
    }
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not_found" : "error",
                   req.method + " " + req.path);
      }
    });
    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
  }
};

AnnotationServer::AnnotationServer(AnnotationStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  impl_->routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind() {
  const auto& o = impl_->options;
  int port = o.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(o.host);
    if (port < 0) throw Error("cannot bind " + o.host);
  } else if (!impl_->server.bind_to_port(o.host, port)) {
    throw Error("cannot bind " + o.host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return port;
}

void AnnotationServer::serve() {
  if (!impl_->bound) throw Error("serve() called before bind()");
  impl_->server.listen_after_bind();
}

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace iterchat
