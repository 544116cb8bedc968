#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ctnli/backend.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/infer.hpp"
#include "ctnli/prompt.hpp"

namespace ctnli::testsupport {

inline std::filesystem::path test_data_dir() { return CTNLI_TEST_DATA_DIR; }
inline std::filesystem::path golden_dir() { return CTNLI_GOLDEN_DIR; }

inline std::filesystem::path mini_ctr_dir() { return test_data_dir() / "mini" / "ctrs"; }
inline std::filesystem::path mini_statements() {
  return test_data_dir() / "mini" / "statements.json";
}
inline std::filesystem::path mini_manifest() {
  return test_data_dir() / "mini" / "manifest.json";
}

inline Corpus load_mini_corpus(bool with_manifest = true) {
  std::optional<std::filesystem::path> manifest;
  if (with_manifest) manifest = mini_manifest();
  return load_corpus(mini_ctr_dir(), mini_statements(), manifest);
}

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("ctnli-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// ---------------------------------------------------------------------------
// Mock scripting
// ---------------------------------------------------------------------------

struct ScriptedReply {
  std::string explanation;
  std::string verdict;
};

// Scripted verdicts for the 12-statement fixture. Hand-scored expectations:
// tp=4 fp=2 fn=2 tn=4, f1 = 2/3, consistency = 1/2, faithfulness = 1/2,
// one Unparsed (s11).
inline std::map<std::string, ScriptedReply> default_mini_script() {
  std::map<std::string, ScriptedReply> script;
  auto add = [&](const std::string& id, const std::string& verdict) {
    script[id] = {"Scripted analysis for " + id + ".", verdict};
  };
  add("s01", "Yes");
  add("s02", "No");
  add("s03", "Yes");
  add("s04", "Yes");
  add("s05", "Yes");
  add("s06", "No");
  add("s07", "Yes");
  add("s08", "Yes");
  add("s09", "No");
  add("s10", "No");
  add("s11", "It depends on the dosage");
  add("s12", "no");
  return script;
}

inline void script_statement(MockReplayBackend& mock, const Corpus& corpus,
                             const StatementInstance& stmt, const RunPlan& plan,
                             const TemplatePack& pack, const ScriptedReply& reply) {
  ConversationScript script =
      render_script(corpus, stmt, plan.mode, extraction_prompt(plan.extraction_id), plan.gen, pack);
  mock.add_text(compute_request_key(mock.id(), {script.turns[0]}, plan.gen), reply.explanation);
  std::vector<ChatMessage> followup = {script.turns[0],
                                       {Role::Assistant, reply.explanation},
                                       script.turns[1]};
  mock.add_text(compute_request_key(mock.id(), followup, plan.gen), reply.verdict);
}

inline std::shared_ptr<MockReplayBackend> scripted_backend(
    const Corpus& corpus, const RunPlan& plan,
    const std::map<std::string, ScriptedReply>& script,
    const TemplatePack& pack = TemplatePack::defaults()) {
  auto mock = std::make_shared<MockReplayBackend>();
  for (const auto& [id, reply] : script) {
    script_statement(*mock, corpus, corpus.statement(id), plan, pack, reply);
  }
  return mock;
}

// Writes the same script as a replay fixture file (for CLI-level tests).
inline void write_fixture_file(const std::filesystem::path& path, const Corpus& corpus,
                               const RunPlan& plan,
                               const std::map<std::string, ScriptedReply>& script,
                               const TemplatePack& pack = TemplatePack::defaults()) {
  json fixture = json::object();
  auto put = [&](const std::string& key, const std::string& text) {
    BackendReply reply;
    reply.text = text;
    fixture[key] = detail::make_entry(key, "mock", plan.gen, reply);
  };
  for (const auto& [id, reply] : script) {
    ConversationScript rendered = render_script(
        corpus, corpus.statement(id), plan.mode, extraction_prompt(plan.extraction_id), plan.gen, pack);
    put(compute_request_key("mock", {rendered.turns[0]}, plan.gen), reply.explanation);
    std::vector<ChatMessage> followup = {rendered.turns[0],
                                         {Role::Assistant, reply.explanation},
                                         rendered.turns[1]};
    put(compute_request_key("mock", followup, plan.gen), reply.verdict);
  }
  write_file_atomic(path, fixture.dump(2) + "\n");
}

inline RunPlan mini_plan(const std::filesystem::path& run_dir,
                         ReasoningMode mode = ReasoningMode::ToTplusCoT, int concurrency = 1) {
  RunPlan plan;
  plan.mode = mode;
  plan.extraction_id = kDefaultExtractionPromptId;
  plan.backend_kind = BackendKind::MockReplay;
  plan.gen = openai_default_gen();
  plan.concurrency = concurrency;
  plan.run_dir = run_dir;
  return plan;
}

// In-process HTTP stub; register handlers on server() before start().
class StubServer {
 public:
  StubServer() = default;
  ~StubServer() { stop(); }

  httplib::Server& server() { return server_; }

  std::string start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return "http://127.0.0.1:" + std::to_string(port_);
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Counts calls that reach the wrapped backend; used by the cache contract
// checks.
class CountingBackend : public ChatBackend {
 public:
  explicit CountingBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}

  std::string id() const override { return inner_->id(); }

  BackendReply send(const ChatRequest& request) override {
    calls_.fetch_add(1);
    return inner_->send(request);
  }

  int calls() const { return calls_.load(); }

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::atomic<int> calls_{0};
};

}  // namespace ctnli::testsupport
