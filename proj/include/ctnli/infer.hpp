#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ctnli/backend.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/prompt.hpp"

namespace ctnli {

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

enum class Parsed { Entailment, Contradiction, Unparsed };

inline const char* to_string(Parsed p) {
  switch (p) {
    case Parsed::Entailment: return "Entailment";
    case Parsed::Contradiction: return "Contradiction";
    case Parsed::Unparsed: return "Unparsed";
  }
  return "?";
}

inline Parsed parse_parsed(const std::string& s) {
  if (s == "Entailment") return Parsed::Entailment;
  if (s == "Contradiction") return Parsed::Contradiction;
  if (s == "Unparsed") return Parsed::Unparsed;
  throw Error("unknown parsed state: " + s);
}

inline Parsed to_parsed(Label label) {
  return label == Label::Entailment ? Parsed::Entailment : Parsed::Contradiction;
}

struct ParseResult {
  Parsed parsed = Parsed::Unparsed;
  std::optional<std::string> rule;  // present iff parsed != Unparsed
};

// Total function over the lowercased, punctuation-stripped first 10
// whitespace tokens. The conflict guard (R4) refuses replies that carry both
// polarities; otherwise R1 matches a leading yes/no, R2 the label words, R3
// true/false.
inline ParseResult parse_label(const std::string& raw) {
  std::vector<std::string> tokens;
  {
    std::vector<std::string> raw_tokens = split_whitespace(raw);
    const std::size_t window = std::min<std::size_t>(raw_tokens.size(), 10);
    for (std::size_t i = 0; i < window; ++i) {
      std::string_view token = raw_tokens[i];
      while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.front()))) {
        token.remove_prefix(1);
      }
      while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.back()))) {
        token.remove_suffix(1);
      }
      if (!token.empty()) tokens.push_back(to_lower(token));
    }
  }
  if (tokens.empty()) return {};

  auto contains = [&](std::string_view word) {
    for (const auto& t : tokens) {
      if (t == word) return true;
    }
    return false;
  };
  const bool positive = contains("yes") || contains("entailment") || contains("true");
  const bool negative = contains("no") || contains("contradiction") || contains("false");
  if (positive && negative) return {};  // R4

  if (tokens.front() == "yes") return {Parsed::Entailment, "R1"};
  if (tokens.front() == "no") return {Parsed::Contradiction, "R1"};
  if (contains("entailment")) return {Parsed::Entailment, "R2"};
  if (contains("contradiction")) return {Parsed::Contradiction, "R2"};
  if (contains("true")) return {Parsed::Entailment, "R3"};
  if (contains("false")) return {Parsed::Contradiction, "R3"};
  return {};
}

// ---------------------------------------------------------------------------
// Run plans and artifacts
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string statement_id;
  std::string explanation;  // turn-1 model text, retained verbatim
  std::string raw_verdict;  // turn-2 model text
  Parsed parsed = Parsed::Unparsed;
  std::optional<std::string> parse_rule;
  std::string transcript_ref;

  bool operator==(const PredictionRecord&) const = default;
};

inline json prediction_to_json(const PredictionRecord& record) {
  return {{"statement_id", record.statement_id},
          {"explanation", record.explanation},
          {"raw_verdict", record.raw_verdict},
          {"parsed", to_string(record.parsed)},
          {"parse_rule", record.parse_rule ? json(*record.parse_rule) : json(nullptr)},
          {"transcript_ref", record.transcript_ref}};
}

inline PredictionRecord prediction_from_json(const json& doc) {
  PredictionRecord record;
  record.statement_id = doc.at("statement_id").get<std::string>();
  record.explanation = doc.at("explanation").get<std::string>();
  record.raw_verdict = doc.at("raw_verdict").get<std::string>();
  record.parsed = parse_parsed(doc.at("parsed").get<std::string>());
  if (doc.contains("parse_rule") && !doc.at("parse_rule").is_null()) {
    record.parse_rule = doc.at("parse_rule").get<std::string>();
  }
  record.transcript_ref = doc.value("transcript_ref", "");
  return record;
}

struct RunPlan {
  std::vector<std::string> selection;  // empty selects every statement
  ReasoningMode mode = ReasoningMode::Plain;
  int extraction_id = kDefaultExtractionPromptId;
  BackendKind backend_kind = BackendKind::MockReplay;
  GenerationConfig gen;
  int concurrency = 1;
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> template_pack_dir;

  void validate() const {
    if (concurrency < 1) throw Error("concurrency must be >= 1");
    extraction_prompt(extraction_id);
    gen.validate();
    if (run_dir.empty()) throw Error("run_dir is required");
  }
};

struct RunFailure {
  std::string statement_id;
  std::string stage;  // "turn1" | "turn2"
  std::string cause;
};

struct RunArtifact {
  enum class Status { Complete, Partial };

  std::filesystem::path run_dir;
  std::vector<PredictionRecord> predictions;  // sorted by statement_id
  Status status = Status::Partial;
  std::vector<RunFailure> failures;
};

namespace detail {

// Semantic identity of a run: everything that changes the predictions,
// nothing that is execution detail (concurrency, local paths).
inline json plan_semantic_json(const RunPlan& plan, const std::string& template_digest,
                               const std::string& corpus_digest) {
  return {{"mode", to_string(plan.mode)},
          {"extraction_id", plan.extraction_id},
          {"backend", to_string(plan.backend_kind)},
          {"gen",
           {{"model", plan.gen.model_name},
            {"temperature", plan.gen.temperature},
            {"max_output_tokens", plan.gen.max_output_tokens},
            {"safety_setting", plan.gen.safety_setting}}},
          {"selection", plan.selection},
          {"template_digest", template_digest},
          {"dataset_digest", corpus_digest}};
}

}  // namespace detail

inline std::string plan_digest(const RunPlan& plan, const TemplatePack& pack,
                               const Corpus& corpus) {
  return sha256_hex(detail::plan_semantic_json(plan, pack.digest(), dataset_digest(corpus)).dump());
}

inline json plan_snapshot_json(const RunPlan& plan, const TemplatePack& pack,
                               const Corpus& corpus) {
  json doc = detail::plan_semantic_json(plan, pack.digest(), dataset_digest(corpus));
  doc["version"] = 1;
  doc["concurrency"] = plan.concurrency;
  doc["cache_dir"] = plan.cache_dir ? json(plan.cache_dir->string()) : json(nullptr);
  doc["template_pack_dir"] =
      plan.template_pack_dir ? json(plan.template_pack_dir->string()) : json(nullptr);
  doc["template_overridden"] = pack.overridden();
  doc["gen"]["timeout_ms"] = plan.gen.request_timeout.count();
  doc["plan_digest"] = plan_digest(plan, pack, corpus);
  return doc;
}

// ---------------------------------------------------------------------------
// Single-statement execution
// ---------------------------------------------------------------------------

struct StatementOutcome {
  PredictionRecord record;
  std::optional<RunFailure> failure;
  json transcript;
};

namespace detail {

inline json turn_meta(const BackendReply& reply) {
  json usage = nullptr;
  if (reply.usage) {
    usage = {{"prompt_tokens", reply.usage->prompt_tokens},
             {"completion_tokens", reply.usage->completion_tokens},
             {"total_tokens", reply.usage->total_tokens}};
  }
  return {{"finish_reason", to_string(reply.finish_reason)},
          {"cache_hit", reply.cache_hit},
          {"latency_ms", reply.latency.count()},
          {"attempts", reply.attempts},
          {"usage", std::move(usage)}};
}

}  // namespace detail

// Runs the two-question protocol: ask for an explanation, append it as an
// Assistant turn, ask the extraction question, parse the verdict. Backend
// failures, filtered replies, and statement-level data errors all become
// Unparsed records with the cause kept; nothing here aborts a batch.
inline StatementOutcome run_statement(const Corpus& corpus, const StatementInstance& stmt,
                                      const RunPlan& plan, ChatBackend& backend,
                                      const TemplatePack& pack = TemplatePack::defaults()) {
  StatementOutcome outcome;
  outcome.record.statement_id = stmt.statement_id;
  outcome.record.transcript_ref = "transcripts/" + stmt.statement_id + ".json";

  json messages = json::array();
  json turn_meta = json::array();
  auto push_message = [&](Role role, const std::string& text) {
    messages.push_back({{"role", to_string(role)}, {"text", text}});
  };
  auto fail = [&](const std::string& stage, const std::string& cause) {
    outcome.failure = RunFailure{stmt.statement_id, stage, cause};
  };

  std::string premise;
  std::string stage = "render";
  try {
    premise = assemble_premise(corpus, stmt);
    ConversationScript script = render_script(corpus, stmt, plan.mode,
                                              extraction_prompt(plan.extraction_id),
                                              plan.gen, pack);
    stage = "turn1";
    push_message(Role::User, script.turns[0].text);
    ChatRequest req1 = make_chat_request(backend.id(), {script.turns[0]}, plan.gen);
    BackendReply reply1 = send_chat(backend, req1);
    turn_meta.push_back(detail::turn_meta(reply1));
    if (reply1.finish_reason == FinishReason::Filtered ||
        reply1.finish_reason == FinishReason::Error) {
      fail("turn1", std::string("reply finished as ") + to_string(reply1.finish_reason));
    } else {
      outcome.record.explanation = reply1.text;
      push_message(Role::Assistant, reply1.text);
      stage = "turn2";
      std::vector<ChatMessage> followup = {script.turns[0],
                                           {Role::Assistant, reply1.text},
                                           script.turns[1]};
      push_message(Role::User, script.turns[1].text);
      ChatRequest req2 = make_chat_request(backend.id(), followup, plan.gen);
      BackendReply reply2 = send_chat(backend, req2);
      turn_meta.push_back(detail::turn_meta(reply2));
      if (reply2.finish_reason == FinishReason::Filtered ||
          reply2.finish_reason == FinishReason::Error) {
        fail("turn2", std::string("reply finished as ") + to_string(reply2.finish_reason));
      } else {
        outcome.record.raw_verdict = reply2.text;
        push_message(Role::Assistant, reply2.text);
        ParseResult parsed = parse_label(reply2.text);
        outcome.record.parsed = parsed.parsed;
        outcome.record.parse_rule = parsed.rule;
      }
    }
  } catch (const Error& ex) {
    fail(stage, ex.what());
  }

  outcome.transcript = {
      {"statement_id", stmt.statement_id},
      {"mode", to_string(plan.mode)},
      {"extraction_id", plan.extraction_id},
      {"model", plan.gen.model_name},
      {"premise", premise},
      {"hypothesis", stmt.text},
      {"gold", stmt.gold ? json(to_string(*stmt.gold)) : json(nullptr)},
      {"parsed", to_string(outcome.record.parsed)},
      {"parse_rule",
       outcome.record.parse_rule ? json(*outcome.record.parse_rule) : json(nullptr)},
      {"messages", std::move(messages)},
      {"turn_meta", std::move(turn_meta)},
      {"failure", outcome.failure
                      ? json({{"stage", outcome.failure->stage},
                              {"cause", outcome.failure->cause}})
                      : json(nullptr)}};
  return outcome;
}

// ---------------------------------------------------------------------------
// Batch execution with durable, resumable state
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> selected_ids(const Corpus& corpus, const RunPlan& plan) {
  std::vector<std::string> ids;
  if (plan.selection.empty()) {
    for (const auto& [id, stmt] : corpus.statements()) ids.push_back(id);
  } else {
    std::set<std::string> seen;
    for (const auto& id : plan.selection) {
      corpus.statement(id);  // throws UnknownStatement
      if (seen.insert(id).second) ids.push_back(id);
    }
  }
  return ids;
}

// Valid records already durable in results.jsonl; a torn trailing line from a
// crash is skipped.
inline std::map<std::string, PredictionRecord> load_durable_records(
    const std::filesystem::path& results_path) {
  std::map<std::string, PredictionRecord> records;
  if (!std::filesystem::exists(results_path)) return records;
  std::ifstream in(results_path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      PredictionRecord record = prediction_from_json(json::parse(line));
      records.emplace(record.statement_id, std::move(record));
    } catch (const std::exception&) {
      continue;  // torn or foreign line
    }
  }
  return records;
}

inline std::vector<RunFailure> load_failures(const std::filesystem::path& failures_path) {
  std::vector<RunFailure> failures;
  if (!std::filesystem::exists(failures_path)) return failures;
  std::ifstream in(failures_path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json doc = json::parse(line);
      failures.push_back(RunFailure{doc.at("statement_id").get<std::string>(),
                                    doc.value("stage", ""), doc.value("cause", "")});
    } catch (const std::exception&) {
      continue;
    }
  }
  return failures;
}

// Accepts concurrent appends; each record lands as one flushed line.
class ResultSink {
 public:
  ResultSink(const std::filesystem::path& results_path,
             const std::filesystem::path& failures_path)
      : results_(results_path, std::ios::binary | std::ios::app),
        failures_path_(failures_path) {
    if (!results_) throw Error("cannot open results file: " + results_path.string());
  }

  void append(const StatementOutcome& outcome, const std::filesystem::path& run_dir) {
    // Transcript first: a durable record implies its transcript exists.
    write_file_atomic(run_dir / outcome.record.transcript_ref,
                      outcome.transcript.dump(2) + "\n");
    std::lock_guard lock(mutex_);
    results_ << prediction_to_json(outcome.record).dump() << "\n";
    results_.flush();
    if (outcome.failure) {
      std::ofstream failures(failures_path_, std::ios::binary | std::ios::app);
      failures << json({{"statement_id", outcome.failure->statement_id},
                        {"stage", outcome.failure->stage},
                        {"cause", outcome.failure->cause}})
                      .dump()
               << "\n";
    }
  }

 private:
  std::ofstream results_;
  std::filesystem::path failures_path_;
  std::mutex mutex_;
};

inline RunArtifact execute_run(const Corpus& corpus, const RunPlan& plan,
                               ChatBackend& backend, const TemplatePack& pack,
                               std::map<std::string, PredictionRecord> done) {
  namespace fs = std::filesystem;
  const std::vector<std::string> ids = selected_ids(corpus, plan);

  std::vector<std::string> pending;
  for (const auto& id : ids) {
    if (!done.count(id)) pending.push_back(id);
  }

  if (!pending.empty()) {
    ResultSink sink(plan.run_dir / "results.jsonl", plan.run_dir / "failures.jsonl");
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr batch_error;
    std::mutex done_mutex;
    auto worker = [&] {
      for (;;) {
        std::size_t index = next.fetch_add(1);
        if (index >= pending.size() || abort.load()) return;
        try {
          const StatementInstance& stmt = corpus.statement(pending[index]);
          StatementOutcome outcome = run_statement(corpus, stmt, plan, backend, pack);
          sink.append(outcome, plan.run_dir);
          std::lock_guard lock(done_mutex);
          done.emplace(outcome.record.statement_id, std::move(outcome.record));
        } catch (...) {
          // Environment-level failure (e.g. the sink cannot write). Stop the
          // batch; durable records so far stay resumable.
          std::lock_guard lock(done_mutex);
          if (!batch_error) batch_error = std::current_exception();
          abort.store(true);
          return;
        }
      }
    };
    const std::size_t thread_count =
        std::min<std::size_t>(static_cast<std::size_t>(plan.concurrency), pending.size());
    if (thread_count <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      threads.reserve(thread_count);
      for (std::size_t i = 0; i < thread_count; ++i) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (batch_error) std::rethrow_exception(batch_error);
  }

  RunArtifact artifact;
  artifact.run_dir = plan.run_dir;
  std::vector<std::string> ordered = ids;
  std::sort(ordered.begin(), ordered.end());
  for (const auto& id : ordered) {
    auto it = done.find(id);
    if (it != done.end()) artifact.predictions.push_back(it->second);
  }
  artifact.status = artifact.predictions.size() == ids.size() ? RunArtifact::Status::Complete
                                                              : RunArtifact::Status::Partial;
  artifact.failures = load_failures(plan.run_dir / "failures.jsonl");

  // Finalized predictions: one JSON line per statement, sorted by id.
  std::string out;
  for (const auto& record : artifact.predictions) {
    out += prediction_to_json(record).dump();
    out.push_back('\n');
  }
  write_file_atomic(plan.run_dir / "predictions.jsonl", out);
  return artifact;
}

}  // namespace detail

inline RunArtifact run_batch(const Corpus& corpus, const RunPlan& plan, ChatBackend& backend,
                             const TemplatePack& pack = TemplatePack::defaults()) {
  plan.validate();
  if (std::filesystem::exists(plan.run_dir / "plan")) {
    throw Error("run_dir already holds a run: " + plan.run_dir.string() +
                " (resume it instead)");
  }
  std::filesystem::create_directories(plan.run_dir / "transcripts");
  write_file_atomic(plan.run_dir / "plan",
                    plan_snapshot_json(plan, pack, corpus).dump(2) + "\n");
  return detail::execute_run(corpus, plan, backend, pack, {});
}

inline RunArtifact resume(const Corpus& corpus, const RunPlan& plan, ChatBackend& backend,
                          const TemplatePack& pack = TemplatePack::defaults()) {
  plan.validate();
  const std::filesystem::path snapshot_path = plan.run_dir / "plan";
  if (!std::filesystem::exists(snapshot_path)) {
    throw Error("run_dir has no plan snapshot: " + plan.run_dir.string());
  }
  json snapshot = parse_json_file(snapshot_path);
  const std::string recorded = snapshot.value("plan_digest", "");
  const std::string supplied = plan_digest(plan, pack, corpus);
  if (recorded != supplied) {
    throw PlanMismatch("supplied plan digest " + supplied + " differs from snapshot " +
                       recorded);
  }
  std::filesystem::create_directories(plan.run_dir / "transcripts");
  return detail::execute_run(corpus, plan, backend, pack,
                             detail::load_durable_records(plan.run_dir / "results.jsonl"));
}

// Reads a finished or partial run directory without executing anything. A
// finalized predictions.jsonl marks the run Complete; otherwise only the
// durable per-statement records are available.
inline RunArtifact load_run_artifact(const std::filesystem::path& run_dir) {
  RunArtifact artifact;
  artifact.run_dir = run_dir;
  const std::filesystem::path finalized = run_dir / "predictions.jsonl";
  if (std::filesystem::exists(finalized)) {
    std::ifstream in(finalized, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      artifact.predictions.push_back(prediction_from_json(json::parse(line)));
    }
    artifact.status = RunArtifact::Status::Complete;
  } else {
    auto records = detail::load_durable_records(run_dir / "results.jsonl");
    for (auto& [id, record] : records) artifact.predictions.push_back(std::move(record));
    artifact.status = RunArtifact::Status::Partial;
  }
  artifact.failures = detail::load_failures(run_dir / "failures.jsonl");
  return artifact;
}

}  // namespace ctnli
