#include "iterchat/cli.h"

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <thread>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "iterchat/annotation.h"
#include "iterchat/annotation_server.h"
#include "iterchat/backend.h"
#include "iterchat/dataset.h"
#include "iterchat/extractor.h"
#include "iterchat/io.h"
#include "iterchat/metrics.h"
#include "iterchat/prompts.h"
#include "iterchat/sampler.h"
#include "iterchat/schema.h"

namespace iterchat {

namespace {

// Flags shared by several subcommands.
struct Common {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string log_level = "warn";
  std::string prompt_dir;
};

struct BackendFlags {
  std::string kind = "template";
  std::string config_path;
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  std::optional<double> timeout;
  std::optional<int> max_retries;
  std::optional<double> temperature;
  std::optional<int> max_in_flight;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& f, std::vector<std::string> kinds) {
  cmd->add_option("--backend", f.kind, "Generation backend")->check(CLI::IsMember(kinds));
  cmd->add_option("--backend-config", f.config_path, "JSON file with http backend settings");
  cmd->add_option("--endpoint", f.endpoint, "Chat-completions base URL (http backend)");
  cmd->add_option("--model", f.model, "Model id (http backend)");
  cmd->add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key");
  cmd->add_option("--timeout", f.timeout, "Request timeout in seconds");
  cmd->add_option("--max-retries", f.max_retries, "Retries on transient failures");
  cmd->add_option("--temperature", f.temperature, "Sampling temperature");
  cmd->add_option("--max-in-flight", f.max_in_flight, "Concurrent request cap");
}

std::unique_ptr<Backend> make_backend(const BackendFlags& f, const Common& common) {
  if (f.kind == "template" || f.kind == "echo") return std::make_unique<TemplateBackend>();
  BackendConfig config = BackendConfig::from_env();
  if (!f.config_path.empty()) config = BackendConfig::from_json(Json::parse(read_file(f.config_path)), config);
  if (!f.endpoint.empty()) config.endpoint_url = f.endpoint;
  if (!f.model.empty()) config.model_id = f.model;
  if (!f.api_key_env.empty()) config.api_key_env = f.api_key_env;
  if (f.timeout) config.timeout_seconds = *f.timeout;
  if (f.max_retries) config.max_retries = *f.max_retries;
  if (f.temperature) config.temperature = *f.temperature;
  if (f.max_in_flight) config.max_in_flight = *f.max_in_flight;
  if (common.seed) config.jitter_seed = *common.seed;
  config.check();
  return std::make_unique<HttpChatBackend>(config);
}

PromptTemplates load_prompts(const Common& common) {
  return common.prompt_dir.empty() ? PromptTemplates::builtin() : PromptTemplates::load(common.prompt_dir);
}

void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::string dialogues_to_jsonl(const std::vector<MultiTurnDialogue>& dialogues) {
  std::string text;
  for (const auto& d : dialogues) text += dialogue_to_json(d).dump() + "\n";
  return text;
}

// Input files hold either IterChat records or multi-turn dialogues.
bool holds_dialogues(const std::vector<Json>& lines) {
  return !lines.empty() && lines.front().is_object() && lines.front().contains("turns");
}

template <typename F>
void parallel_for(std::size_t n, int jobs, F f) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (int j = 0; j < jobs && static_cast<std::size_t>(j) < n; ++j) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

Json prediction_json(const std::string& id, const ExtractionResult& r) {
  return Json{{"record_id", id},
              {"state_gain", gain_to_json(r.state_gain)},
              {"preference_extraction", state_to_json(r.preference_extraction)},
              {"parse_status", to_string(r.parse_status)},
              {"schema_warnings", r.schema_warnings},
              {"raw_output", r.raw_output}};
}

Prediction prediction_from_json(const Json& j) {
  Prediction p;
  if (!j.is_object() || !j.contains("record_id") || !j["record_id"].is_string()) {
    throw FormatError("prediction without a record_id");
  }
  p.record_id = j["record_id"].get<std::string>();
  if (j.contains("preference_extraction") && !j["preference_extraction"].is_null()) {
    p.state = state_from_json(j["preference_extraction"]);
  } else {
    p.parse_status = ParseStatus::kFailed;
  }
  if (j.contains("parse_status") && j["parse_status"].is_string()) {
    if (auto s = parse_parse_status(j["parse_status"].get<std::string>())) p.parse_status = *s;
  }
  return p;
}

struct ErrorSummary {
  std::string kind;
  std::string detail;
  Json extra = Json::object();
};

int fail(std::ostream& err, const ErrorSummary& e) {
  Json j{{"error", e.kind}, {"detail", e.detail}};
  for (const auto& [k, v] : e.extra.items()) j[k] = v;
  err << j.dump() << "\n";
  return 1;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SchemaDraftArgs {
  std::string domain;
  std::size_t max_slots = 8;
  std::string out;
  BackendFlags backend;
};

int run_schema_draft(const SchemaDraftArgs& a, const Common& c, std::ostream& out) {
  auto backend = make_backend(a.backend, c);
  const PreferenceSchema schema = draft_schema(a.domain, *backend, a.max_slots, load_prompts(c));
  emit(out, a.out, serialize_schema(schema) + "\n");
  return 0;
}

int run_schema_validate(const std::string& path, std::ostream& out) {
  const PreferenceSchema schema = load_schema(path);
  out << Json{{"valid", true}, {"domain_name", schema.domain_name}, {"slots", schema.slots.size()}}.dump()
      << "\n";
  return 0;
}

struct GenerateArgs {
  std::string schema;
  std::string config;
  std::optional<int> count;
  std::string out;
  BackendFlags backend;
};

int run_generate(const GenerateArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const PreferenceSchema schema = load_schema(a.schema);
  SamplerConfig config = a.config.empty() ? SamplerConfig{} : SamplerConfig::from_json(Json::parse(read_file(a.config)));
  if (c.seed) config.seed = *c.seed;
  if (a.count) config.record_count = *a.count;
  config.jobs = c.jobs;
  config.check();
  auto backend = make_backend(a.backend, c);
  try {
    GenerationResult result = generate_dataset(schema, config, *backend, load_prompts(c));
    emit(out, a.out, records_to_jsonl(result.records));
    // Records own stdout when no --out is given.
    if (!a.out.empty() && a.out != "-") out << result.stats.to_json().dump(2) << "\n";
    else err << result.stats.to_json().dump() << "\n";
    return 0;
  } catch (const GenerationAborted& e) {
    const std::string partial = (a.out.empty() || a.out == "-" ? std::string("generate") : a.out) + ".partial";
    write_file_atomic(partial, records_to_jsonl(e.partial().records));
    return fail(err, {"generation_aborted", e.what(),
                      Json{{"partial_output", partial}, {"stats", e.partial().stats.to_json()}}});
  }
}

struct ConvertArgs {
  std::string in;
  std::string out;
  std::string mapping;
  std::string schema;
  std::string domain = "hotel";
};

int run_explode(const ConvertArgs& a, std::ostream& out) {
  std::vector<IterChatRecord> records;
  for (const auto& d : load_dialogues(a.in)) {
    auto r = explode(d);
    records.insert(records.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  emit(out, a.out, records_to_jsonl(records));
  return 0;
}

int run_replay(const ConvertArgs& a, std::ostream& out) {
  const auto records = load_records(a.in);
  std::vector<std::string> order;
  std::map<std::string, std::vector<IterChatRecord>> groups;
  for (const auto& r : records) {
    const std::string id = r.source_dialogue_id.value_or("");
    if (groups.find(id) == groups.end()) order.push_back(id);
    groups[id].push_back(r);
  }
  std::string text;
  for (const auto& id : order) {
    PreferenceState final_state;
    try {
      final_state = replay(groups[id]);
    } catch (const FormatError& e) {
      throw FormatError("dialogue '" + id + "': " + e.what());
    }
    text += Json{{"dialogue_id", id}, {"final_state", state_to_json(final_state)}}.dump() + "\n";
  }
  emit(out, a.out, text);
  return 0;
}

int run_ingest(const ConvertArgs& a, std::ostream& out, std::ostream& err) {
  const SlotMapping mapping = SlotMapping::from_json(Json::parse(read_file(a.mapping)));
  std::optional<PreferenceSchema> schema;
  if (!a.schema.empty()) schema = load_schema(a.schema);
  const IngestResult result =
      ingest_external(read_file(a.in), mapping, schema ? &*schema : nullptr, a.domain);
  emit(out, a.out, dialogues_to_jsonl(result.dialogues));
  if (result.warning_count > 0) {
    spdlog::warn("{} dropped slot annotations ({} distinct keys)", result.warning_count,
                 result.dropped_keys.size());
  }
  Json summary{{"dialogues", result.dialogues.size()},
               {"warning_count", result.warning_count},
               {"dropped_keys", result.dropped_keys}};
  ((a.out.empty() || a.out == "-") ? err : out) << summary.dump() << "\n";
  return 0;
}

struct ExtractArgs {
  std::string mode = "iterchat";
  std::string schema;
  std::string in;
  std::string demos;
  std::size_t k = 2;
  std::string out;
  BackendFlags backend;
};

int run_extract(const ExtractArgs& a, const Common& c, std::ostream& out) {
  const PreferenceSchema schema = load_schema(a.schema);
  const PromptMode mode = *parse_prompt_mode(a.mode);
  const PromptTemplates prompts = load_prompts(c);
  const std::vector<DemoExample> demos =
      a.demos.empty() ? std::vector<DemoExample>{} : load_demos(a.demos, mode, a.k);
  auto backend = make_backend(a.backend, c);
  const bool echo = a.backend.kind == "echo";
  const ExtractorContext ctx{schema, demos, *backend, prompts};

  const std::vector<Json> lines = parse_jsonl(read_file(a.in));
  std::vector<std::string> outputs;
  if (holds_dialogues(lines)) {
    std::vector<MultiTurnDialogue> dialogues;
    for (const auto& j : lines) dialogues.push_back(dialogue_from_json(j));
    if (echo) {
      for (const auto& d : dialogues) {
        if (!d.labeled()) throw FormatError("echo backend needs labeled input; dialogue '" + d.dialogue_id + "' is not");
      }
    }
    outputs.resize(dialogues.size());
    parallel_for(dialogues.size(), c.jobs, [&](std::size_t i) {
      const MultiTurnDialogue& d = dialogues[i];
      std::string text;
      if (mode == PromptMode::kIterChat) {
        const Trajectory t = extract_dialogue_iterative(d, ctx, echo ? gold_dialogue_directives(d) : DirectiveSource{});
        for (std::size_t k = 0; k < t.turns.size(); ++k) {
          text += prediction_json(turn_record_id(d.dialogue_id, static_cast<int>(k) + 1), t.turns[k]).dump() + "\n";
        }
      } else {
        std::optional<Json> directive;
        if (echo) {
          directive = Json{{"kind", "extract"},
                           {"preference_extraction", state_to_json(*d.turns.back().gold_state)}};
        }
        text = prediction_json(d.dialogue_id, extract_dialogue_multi_turn(d, ctx, directive)).dump() + "\n";
      }
      outputs[i] = std::move(text);
    });
  } else {
    if (mode != PromptMode::kIterChat) throw FormatError("multi-turn mode needs a dialogue file");
    std::vector<IterChatRecord> records;
    for (const auto& j : lines) records.push_back(record_from_json(j));
    DirectiveSource directive;
    if (echo) {
      for (const auto& r : records) {
        if (!r.labeled()) throw FormatError("echo backend needs labeled input; record '" + r.record_id + "' is not");
      }
      directive = gold_record_directives(records);
    }
    outputs.resize(records.size());
    parallel_for(records.size(), c.jobs, [&](std::size_t i) {
      outputs[i] = prediction_json(records[i].record_id, extract_turn(records[i], ctx, directive)).dump() + "\n";
    });
  }
  std::string text;
  for (const auto& o : outputs) text += o;
  emit(out, a.out, text);
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gold;
  std::string format = "json";
  std::string out;
};

std::string render_report(const EvalReport& report, const std::string& format) {
  return format == "table" ? report.to_table() : report.to_json().dump(2) + "\n";
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<Prediction> preds;
  for (const auto& j : parse_jsonl(read_file(a.pred))) preds.push_back(prediction_from_json(j));
  const std::vector<Json> gold_lines = parse_jsonl(read_file(a.gold));

  if (!holds_dialogues(gold_lines)) {
    std::vector<GoldLabel> golds;
    for (const auto& j : gold_lines) {
      const IterChatRecord r = record_from_json(j);
      if (!r.preference_extraction) throw FormatError("gold record '" + r.record_id + "' is unlabeled");
      golds.push_back({r.record_id, *r.preference_extraction});
    }
    emit(out, a.out, render_report(evaluate_corpus(preds, golds), a.format));
    return 0;
  }

  // Dialogue golds: per-turn states when the predictions carry turn ids
  // (iterative runs), and the final state per dialogue in every case.
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) by_id[p.record_id] = &p;
  std::vector<GoldLabel> turn_golds;
  std::vector<GoldLabel> final_golds;
  std::vector<Prediction> final_preds;
  bool has_turn_preds = false;
  for (const auto& j : gold_lines) {
    const MultiTurnDialogue d = dialogue_from_json(j);
    if (!d.labeled()) throw FormatError("gold dialogue '" + d.dialogue_id + "' is unlabeled");
    const int turns = static_cast<int>(d.turns.size());
    for (int t = 1; t <= turns; ++t) {
      const std::string id = turn_record_id(d.dialogue_id, t);
      has_turn_preds |= by_id.count(id) > 0;
      turn_golds.push_back({id, *d.turns[static_cast<std::size_t>(t - 1)].gold_state});
    }
    final_golds.push_back({d.dialogue_id, *d.turns.back().gold_state});
    if (auto it = by_id.find(d.dialogue_id); it != by_id.end()) {
      final_preds.push_back(*it->second);
    } else if (auto last = by_id.find(turn_record_id(d.dialogue_id, turns)); last != by_id.end()) {
      Prediction p = *last->second;
      p.record_id = d.dialogue_id;
      final_preds.push_back(std::move(p));
    }
  }
  const EvalReport final_report = evaluate_corpus(final_preds, final_golds);
  std::optional<EvalReport> turn_report;
  if (has_turn_preds) turn_report = evaluate_corpus(preds, turn_golds);
  std::string text;
  if (a.format == "table") {
    text = "== final state per dialogue ==\n" + final_report.to_table();
    if (turn_report) text += "\n== every turn ==\n" + turn_report->to_table();
  } else {
    text = Json{{"final", final_report.to_json()},
                {"per_turn", turn_report ? turn_report->to_json() : Json(nullptr)}}
               .dump(2) +
           "\n";
  }
  emit(out, a.out, text);
  return 0;
}

struct ServeArgs {
  std::string schema;
  std::string journal;
  std::string host = "127.0.0.1";
  int port = 8080;
  double lease_minutes = 15.0;
  std::string ui_dir;
  bool fsync = false;
};

int run_serve(const ServeArgs& a, std::ostream& err) {
  StoreOptions options;
  options.journal_path = a.journal;
  options.lease_duration = std::chrono::milliseconds(static_cast<std::int64_t>(a.lease_minutes * 60000.0));
  options.fsync = a.fsync;
  AnnotationStore store(load_schema(a.schema), options);
  ServerOptions server_options;
  server_options.host = a.host;
  server_options.port = a.port;
  if (!a.ui_dir.empty()) server_options.ui_dir = a.ui_dir;
  AnnotationServer server(store, server_options);

  // Block the stop signals before any server thread starts so only the
  // waiter below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const int port = server.bind();
  err << Json{{"listening", a.host + ":" + std::to_string(port)}, {"journal", a.journal}}.dump() << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  return 0;
}

void configure_logging(const std::string& level, std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("iterchat", sink);
  logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
  logger->set_level(spdlog::level::from_str(level));
  spdlog::set_default_logger(logger);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-extraction data toolkit: schemas, synthetic records, extraction, "
               "evaluation and annotation.",
               "iterchat"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  Common common;
  app.add_option("--seed", common.seed, "Seed for every randomized path");
  app.add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
  app.add_option("--prompt-dir", common.prompt_dir, "Directory overriding built-in prompt files")
      ->check(CLI::ExistingDirectory);
  app.fallthrough();

  std::function<int()> action;

  // schema
  auto* schema_cmd = app.add_subcommand("schema", "Draft or validate a preference schema");
  schema_cmd->require_subcommand(1);
  SchemaDraftArgs draft;
  auto* draft_cmd = schema_cmd->add_subcommand("draft", "Ask a backend for a schema");
  draft_cmd->add_option("--domain", draft.domain, "Domain description")->required();
  draft_cmd->add_option("--max-slots", draft.max_slots, "Slot cap")->check(CLI::PositiveNumber);
  draft_cmd->add_option("--out", draft.out, "Output file (default stdout)");
  add_backend_flags(draft_cmd, draft.backend, {"template", "http"});
  draft_cmd->callback([&] { action = [&] { return run_schema_draft(draft, common, out); }; });
  std::string validate_path;
  auto* validate_cmd = schema_cmd->add_subcommand("validate", "Check a schema file");
  validate_cmd->add_option("--schema,schema", validate_path, "Schema file")->required();
  validate_cmd->callback([&] { action = [&] { return run_schema_validate(validate_path, out); }; });

  // generate
  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Sample and realize synthetic records");
  gen_cmd->add_option("--schema", gen.schema, "Schema file")->required();
  gen_cmd->add_option("--config", gen.config, "Sampler config JSON");
  gen_cmd->add_option("--count", gen.count, "Override record_count")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", gen.out, "Output JSONL (default stdout)");
  add_backend_flags(gen_cmd, gen.backend, {"template", "http"});
  gen_cmd->callback([&] { action = [&] { return run_generate(gen, common, out, err); }; });

  // convert
  auto* convert_cmd = app.add_subcommand("convert", "Convert between data formats");
  convert_cmd->require_subcommand(1);
  ConvertArgs conv;
  auto* explode_cmd = convert_cmd->add_subcommand("explode", "Labeled dialogues to per-turn records");
  explode_cmd->add_option("--in", conv.in, "Dialogue JSONL")->required();
  explode_cmd->add_option("--out", conv.out, "Record JSONL (default stdout)");
  explode_cmd->callback([&] { action = [&] { return run_explode(conv, out); }; });
  auto* replay_cmd = convert_cmd->add_subcommand("replay", "Fold record gains to final states");
  replay_cmd->add_option("--in", conv.in, "Record JSONL")->required();
  replay_cmd->add_option("--out", conv.out, "Output JSONL (default stdout)");
  replay_cmd->callback([&] { action = [&] { return run_replay(conv, out); }; });
  auto* ingest_cmd = convert_cmd->add_subcommand("ingest", "Import MultiWOZ-style annotations");
  ingest_cmd->add_option("--in", conv.in, "External dataset JSON")->required();
  ingest_cmd->add_option("--mapping", conv.mapping, "Slot mapping JSON")->required();
  ingest_cmd->add_option("--schema", conv.schema, "Schema the mapped slots must exist in");
  ingest_cmd->add_option("--domain", conv.domain, "domain_name of the produced dialogues");
  ingest_cmd->add_option("--out", conv.out, "Dialogue JSONL (default stdout)");
  ingest_cmd->callback([&] { action = [&] { return run_ingest(conv, out, err); }; });

  // extract
  ExtractArgs ext;
  auto* extract_cmd = app.add_subcommand("extract", "Few-shot preference extraction");
  extract_cmd->add_option("--mode", ext.mode, "iterchat or multi-turn")
      ->check(CLI::IsMember({"iterchat", "multi-turn", "multi_turn"}));
  extract_cmd->add_option("--schema", ext.schema, "Schema file")->required();
  extract_cmd->add_option("--in", ext.in, "Record or dialogue JSONL")->required();
  extract_cmd->add_option("--demos", ext.demos, "Demo JSONL (labeled)");
  extract_cmd->add_option("-k,--k", ext.k, "Number of demos");
  extract_cmd->add_option("--out", ext.out, "Prediction JSONL (default stdout)");
  add_backend_flags(extract_cmd, ext.backend, {"template", "echo", "http"});
  extract_cmd->callback([&] { action = [&] { return run_extract(ext, common, out); }; });

  // eval
  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against gold labels");
  eval_cmd->add_option("--pred", ev.pred, "Prediction JSONL")->required();
  eval_cmd->add_option("--gold", ev.gold, "Gold record or dialogue JSONL")->required();
  eval_cmd->add_option("--format", ev.format, "json or table")->check(CLI::IsMember({"json", "table"}));
  eval_cmd->add_option("--out", ev.out, "Report file (default stdout)");
  eval_cmd->callback([&] { action = [&] { return run_eval(ev, out); }; });

  // serve
  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  serve_cmd->add_option("--schema", sv.schema, "Schema file")->required();
  serve_cmd->add_option("--journal", sv.journal, "Journal path")->required();
  serve_cmd->add_option("--host", sv.host, "Listen address");
  serve_cmd->add_option("--port", sv.port, "Listen port (0 = any)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--lease-minutes", sv.lease_minutes, "Lease duration")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--ui-dir", sv.ui_dir, "Static UI bundle")->check(CLI::ExistingDirectory);
  serve_cmd->add_flag("--fsync", sv.fsync, "fdatasync after every journal write");
  serve_cmd->callback([&] { action = [&] { return run_serve(sv, err); }; });

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands()) sub = s;
    err << (sub != nullptr ? sub->help() : app.help());
    return 2;
  }

  // The logger writes to `err`, which may not outlive this call.
  struct RestoreLogger {
    std::shared_ptr<spdlog::logger> previous = spdlog::default_logger();
    ~RestoreLogger() { spdlog::set_default_logger(previous); }
  } restore_logger;
  configure_logging(common.log_level, err);
  try {
    return action ? action() : 2;
  } catch (const SchemaError& e) {
    return fail(err, {"schema_error", e.what()});
  } catch (const FormatError& e) {
    return fail(err, {"format_error", e.what()});
  } catch (const BackendError& e) {
    return fail(err, {"backend_error", e.what(), Json{{"status", e.status()}, {"attempts", e.attempts()}}});
  } catch (const SamplerError& e) {
    return fail(err, {"sampler_error", e.what()});
  } catch (const GainError& e) {
    return fail(err, {"gain_error", e.what()});
  } catch (const Json::exception& e) {
    return fail(err, {"format_error", e.what()});
  } catch (const std::exception& e) {
    return fail(err, {"error", e.what()});
  }
}

}  // namespace iterchat
