#include "ctnli/backend.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "support.hpp"

namespace ctnli {
namespace {

using testsupport::CountingBackend;
using testsupport::StubServer;
using testsupport::TempDir;

std::vector<ChatMessage> one_message(const std::string& text = "hello") {
  return {{Role::User, text}};
}

GenerationConfig test_gen() {
  GenerationConfig gen = openai_default_gen();
  gen.request_timeout = std::chrono::milliseconds(5000);
  return gen;
}

// ---------------------------------------------------------------------------
// Request keys
// ---------------------------------------------------------------------------

TEST(RequestKey, PureFunctionOfListedFields) {
  GenerationConfig gen = test_gen();
  std::string a = compute_request_key("mock", one_message(), gen);
  std::string b = compute_request_key("mock", one_message(), gen);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 64u);

  GenerationConfig warmer = gen;
  warmer.temperature = 0.9;
  EXPECT_NE(compute_request_key("mock", one_message(), warmer), a);
  EXPECT_NE(compute_request_key("openai", one_message(), gen), a);
  EXPECT_NE(compute_request_key("mock", one_message("other"), gen), a);
  GenerationConfig longer = gen;
  longer.max_output_tokens = 9;
  EXPECT_NE(compute_request_key("mock", one_message(), longer), a);
}

TEST(RequestKey, TimeoutDoesNotAffectKey) {
  GenerationConfig gen = test_gen();
  GenerationConfig slow = gen;
  slow.request_timeout = std::chrono::milliseconds(99'999);
  EXPECT_EQ(compute_request_key("mock", one_message(), gen),
            compute_request_key("mock", one_message(), slow));
}

// ---------------------------------------------------------------------------
// MockReplay
// ---------------------------------------------------------------------------

TEST(MockReplay, AnswersFromFixture) {
  MockReplayBackend mock;
  ChatRequest request = make_chat_request("mock", one_message(), test_gen());
  mock.add_text(request.request_key, "Yes");
  BackendReply reply = mock.send(request);
  EXPECT_EQ(reply.text, "Yes");
  EXPECT_FALSE(reply.cache_hit);
  EXPECT_EQ(reply.finish_reason, FinishReason::Stop);
}

TEST(MockReplay, MissNamesKey) {
  MockReplayBackend mock;
  ChatRequest request = make_chat_request("mock", one_message(), test_gen());
  try {
    mock.send(request);
    FAIL() << "expected FixtureMiss";
  } catch (const BackendError& ex) {
    EXPECT_EQ(ex.error_class(), ErrorClass::FixtureMiss);
    EXPECT_NE(std::string(ex.what()).find(request.request_key), std::string::npos);
  }
}

TEST(MockReplay, FixtureFileAdoptsRecordedBackendId) {
  TempDir dir;
  GenerationConfig gen = test_gen();
  std::string key = compute_request_key("openai", one_message(), gen);
  BackendReply canned;
  canned.text = "No";
  json fixture = {{key, detail::make_entry(key, "openai", gen, canned)}};
  write_file_atomic(dir.path / "f.json", fixture.dump());

  auto mock = MockReplayBackend::from_file(dir.path / "f.json");
  EXPECT_EQ(mock->id(), "openai");
  ChatRequest request = make_chat_request(mock->id(), one_message(), gen);
  EXPECT_EQ(mock->send(request).text, "No");
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

TEST(Cache, HitSkipsInnerCallAndPreservesBytes) {
  TempDir dir;
  auto mock = std::make_shared<MockReplayBackend>();
  ChatRequest request = make_chat_request("mock", one_message(), test_gen());
  mock->add_text(request.request_key, "Yes, anemia rates are low.");
  auto counter = std::make_shared<CountingBackend>(mock);
  auto cached = with_cache(counter, dir.path / "cache");

  BackendReply first = cached->send(request);
  EXPECT_FALSE(first.cache_hit);
  BackendReply second = cached->send(request);
  EXPECT_TRUE(second.cache_hit);
  EXPECT_EQ(second.text, first.text);
  EXPECT_EQ(counter->calls(), 1);
}

TEST(Cache, DistinctTemperaturesGetDistinctEntries) {
  TempDir dir;
  auto mock = std::make_shared<MockReplayBackend>();
  GenerationConfig cool = test_gen();
  GenerationConfig warm = test_gen();
  warm.temperature = 1.3;
  ChatRequest request_cool = make_chat_request("mock", one_message(), cool);
  ChatRequest request_warm = make_chat_request("mock", one_message(), warm);
  mock->add_text(request_cool.request_key, "cool");
  mock->add_text(request_warm.request_key, "warm");
  auto cached = with_cache(mock, dir.path / "cache");
  cached->send(request_cool);
  cached->send(request_warm);

  std::size_t entries = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path / "cache")) {
    if (entry.path().extension() == ".json") ++entries;
  }
  EXPECT_EQ(entries, 2u);
}

TEST(Cache, TruncatedEntryIsMissAndRewritten) {
  TempDir dir;
  auto mock = std::make_shared<MockReplayBackend>();
  ChatRequest request = make_chat_request("mock", one_message(), test_gen());
  mock->add_text(request.request_key, "Yes");
  auto counter = std::make_shared<CountingBackend>(mock);
  auto cached = with_cache(counter, dir.path / "cache");
  cached->send(request);

  std::filesystem::path entry = dir.path / "cache" / (request.request_key + ".json");
  ASSERT_TRUE(std::filesystem::exists(entry));
  {
    std::string content = read_file(entry);
    std::ofstream out(entry, std::ios::binary | std::ios::trunc);
    out << content.substr(0, content.size() / 2);
  }

  BackendReply reply = cached->send(request);
  EXPECT_FALSE(reply.cache_hit);
  EXPECT_EQ(reply.text, "Yes");
  EXPECT_EQ(counter->calls(), 2);

  // Entry was rewritten; the next call hits.
  EXPECT_TRUE(cached->send(request).cache_hit);
  EXPECT_EQ(counter->calls(), 2);
}

TEST(Cache, TamperedReplyFailsIntegrityCheck) {
  TempDir dir;
  auto mock = std::make_shared<MockReplayBackend>();
  ChatRequest request = make_chat_request("mock", one_message(), test_gen());
  mock->add_text(request.request_key, "Yes");
  auto cached = with_cache(mock, dir.path / "cache");
  cached->send(request);

  std::filesystem::path entry_path = dir.path / "cache" / (request.request_key + ".json");
  json entry = json::parse(read_file(entry_path));
  entry["reply"]["text"] = "No";  // checksum now stale
  write_file_atomic(entry_path, entry.dump());

  BackendReply reply = cached->send(request);
  EXPECT_FALSE(reply.cache_hit);
  EXPECT_EQ(reply.text, "Yes");
}

// ---------------------------------------------------------------------------
// Error classification
// ---------------------------------------------------------------------------

WireResponse with_status(int status) {
  WireResponse wire;
  wire.status = status;
  return wire;
}

TEST(ClassifyError, Taxonomy) {
  EXPECT_EQ(classify_error(with_status(401)), ErrorClass::AuthError);
  EXPECT_EQ(classify_error(with_status(403)), ErrorClass::AuthError);
  EXPECT_EQ(classify_error(with_status(429)), ErrorClass::RateLimited);
  EXPECT_EQ(classify_error(with_status(408)), ErrorClass::Timeout);
  EXPECT_EQ(classify_error(with_status(500)), ErrorClass::ServerError);
  EXPECT_EQ(classify_error(with_status(503)), ErrorClass::ServerError);
  EXPECT_EQ(classify_error(with_status(418)), ErrorClass::ServerError);  // unknown shape
  WireResponse timeout;
  timeout.transport_timeout = true;
  EXPECT_EQ(classify_error(timeout), ErrorClass::Timeout);
  WireResponse refused;
  refused.transport_error = true;
  EXPECT_EQ(classify_error(refused), ErrorClass::ServerError);
}

TEST(RetryPolicy, RetryableClasses) {
  EXPECT_TRUE(retryable(ErrorClass::RateLimited));
  EXPECT_TRUE(retryable(ErrorClass::Timeout));
  EXPECT_TRUE(retryable(ErrorClass::ServerError));
  EXPECT_FALSE(retryable(ErrorClass::AuthError));
  EXPECT_FALSE(retryable(ErrorClass::ContentFiltered));
  EXPECT_FALSE(retryable(ErrorClass::FixtureMiss));
}

// ---------------------------------------------------------------------------
// Hosted wire dialects against a stub server
// ---------------------------------------------------------------------------

HostedConfig stub_config(const std::string& base_url) {
  HostedConfig config;
  config.base_url = base_url + "/v1";
  config.api_key = "test-key";
  config.retry.base_delay = std::chrono::milliseconds(1);
  config.retry.sleeper = [](std::chrono::milliseconds) {};
  return config;
}

TEST(OpenAIDialect, RequestShapeAndReplyParse) {
  StubServer stub;
  json captured;
  std::string auth_header;
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request& req, httplib::Response& res) {
                       captured = json::parse(req.body);
                       auth_header = req.get_header_value("Authorization");
                       res.set_content(
                           json{{"choices",
                                 {{{"message", {{"content", "Yes"}}},
                                   {"finish_reason", "stop"}}}},
                                {"usage",
                                 {{"prompt_tokens", 12},
                                  {"completion_tokens", 1},
                                  {"total_tokens", 13}}}}
                               .dump(),
                           "application/json");
                     });
  OpenAICompatBackend backend(stub_config(stub.start()));

  GenerationConfig gen = openai_default_gen();
  ChatRequest request = make_chat_request(
      backend.id(), {{Role::User, "q1"}, {Role::Assistant, "a1"}, {Role::User, "q2"}}, gen);
  BackendReply reply = backend.send(request);

  EXPECT_EQ(reply.text, "Yes");
  EXPECT_EQ(reply.finish_reason, FinishReason::Stop);
  ASSERT_TRUE(reply.usage.has_value());
  EXPECT_EQ(reply.usage->total_tokens, 13);
  EXPECT_EQ(auth_header, "Bearer test-key");

  EXPECT_EQ(captured.at("model"), "gpt-3.5-turbo-0613");
  EXPECT_DOUBLE_EQ(captured.at("temperature").get<double>(), 0.6);
  EXPECT_EQ(captured.at("max_tokens"), 1024);
  ASSERT_EQ(captured.at("messages").size(), 3u);
  EXPECT_EQ(captured.at("messages")[0].at("role"), "user");
  EXPECT_EQ(captured.at("messages")[0].at("content"), "q1");
  EXPECT_EQ(captured.at("messages")[1].at("role"), "assistant");
  EXPECT_EQ(captured.at("messages")[2].at("role"), "user");
}

TEST(GeminiDialect, RequestShapeAndReplyParse) {
  StubServer stub;
  json captured;
  stub.server().Post(R"(/v1/models/.*)", [&](const httplib::Request& req,
                                             httplib::Response& res) {
    captured = json::parse(req.body);
    res.set_content(json{{"candidates",
                          {{{"content", {{"parts", {{{"text", "Y"}}, {{"text", "es"}}}}}},
                            {"finishReason", "STOP"}}}},
                         {"usageMetadata",
                          {{"promptTokenCount", 20},
                           {"candidatesTokenCount", 2},
                           {"totalTokenCount", 22}}}}
                        .dump(),
                    "application/json");
  });
  GeminiStyleBackend backend(stub_config(stub.start()));

  GenerationConfig gen = gemini_default_gen();
  ChatRequest request = make_chat_request(
      backend.id(), {{Role::User, "q1"}, {Role::Assistant, "a1"}, {Role::User, "q2"}}, gen);
  BackendReply reply = backend.send(request);

  EXPECT_EQ(reply.text, "Yes");
  ASSERT_TRUE(reply.usage.has_value());
  EXPECT_EQ(reply.usage->prompt_tokens, 20);

  ASSERT_EQ(captured.at("contents").size(), 3u);
  EXPECT_EQ(captured.at("contents")[0].at("role"), "user");
  EXPECT_EQ(captured.at("contents")[0].at("parts")[0].at("text"), "q1");
  EXPECT_EQ(captured.at("contents")[1].at("role"), "model");
  EXPECT_DOUBLE_EQ(captured.at("generationConfig").at("temperature").get<double>(), 0.7);
  EXPECT_EQ(captured.at("generationConfig").at("maxOutputTokens"), 1024);
  ASSERT_TRUE(captured.contains("safetySettings"));
  ASSERT_EQ(captured.at("safetySettings").size(), 4u);
  for (const auto& setting : captured.at("safetySettings")) {
    EXPECT_EQ(setting.at("threshold"), "BLOCK_NONE");
  }
}

TEST(GeminiDialect, SafetyBlockBecomesFilteredReply) {
  StubServer stub;
  stub.server().Post(R"(/v1/models/.*)", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(
        json{{"candidates", {{{"finishReason", "SAFETY"}}}}}.dump(), "application/json");
  });
  GeminiStyleBackend backend(stub_config(stub.start()));
  ChatRequest request = make_chat_request(backend.id(), one_message(), gemini_default_gen());
  BackendReply reply = backend.send(request);
  EXPECT_EQ(reply.finish_reason, FinishReason::Filtered);
  EXPECT_TRUE(reply.text.empty());
}

TEST(Retry, FailTwiceThenSucceed) {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       int hit = hits.fetch_add(1);
                       if (hit < 2) {
                         res.status = 429;
                         res.set_content("{\"error\": \"rate limited\"}", "application/json");
                         return;
                       }
                       res.set_content(json{{"choices",
                                             {{{"message", {{"content", "OK"}}},
                                               {"finish_reason", "stop"}}}}}
                                           .dump(),
                                       "application/json");
                     });
  HostedConfig config = stub_config(stub.start());
  std::vector<std::chrono::milliseconds> delays;
  config.retry.sleeper = [&](std::chrono::milliseconds d) { delays.push_back(d); };
  OpenAICompatBackend backend(config);

  BackendReply reply =
      backend.send(make_chat_request(backend.id(), one_message(), openai_default_gen()));
  EXPECT_EQ(reply.text, "OK");
  EXPECT_EQ(reply.attempts, 3);
  EXPECT_EQ(hits.load(), 3);
  ASSERT_EQ(delays.size(), 2u);
  EXPECT_LE(delays[0], delays[1]);
}

TEST(Retry, AttemptCapRespectedWithNondecreasingDelays) {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       hits.fetch_add(1);
                       res.status = 500;
                     });
  HostedConfig config = stub_config(stub.start());
  std::vector<std::chrono::milliseconds> delays;
  config.retry.sleeper = [&](std::chrono::milliseconds d) { delays.push_back(d); };
  OpenAICompatBackend backend(config);

  try {
    backend.send(make_chat_request(backend.id(), one_message(), openai_default_gen()));
    FAIL() << "expected ServerError";
  } catch (const BackendError& ex) {
    EXPECT_EQ(ex.error_class(), ErrorClass::ServerError);
    EXPECT_EQ(ex.attempts(), 5);
  }
  EXPECT_EQ(hits.load(), 5);
  ASSERT_EQ(delays.size(), 4u);
  for (std::size_t i = 1; i < delays.size(); ++i) EXPECT_LE(delays[i - 1], delays[i]);
}

TEST(Retry, AuthErrorIsNotRetried) {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       hits.fetch_add(1);
                       res.status = 401;
                     });
  OpenAICompatBackend backend(stub_config(stub.start()));
  EXPECT_THROW(
      backend.send(make_chat_request(backend.id(), one_message(), openai_default_gen())),
      BackendError);
  EXPECT_EQ(hits.load(), 1);
}

TEST(Retry, MissingCredentialsFailFast) {
  HostedConfig config = stub_config("http://127.0.0.1:9");
  config.api_key = "";
  OpenAICompatBackend backend(config);
  try {
    backend.send(make_chat_request(backend.id(), one_message(), openai_default_gen()));
    FAIL() << "expected AuthError";
  } catch (const BackendError& ex) {
    EXPECT_EQ(ex.error_class(), ErrorClass::AuthError);
    EXPECT_NE(std::string(ex.what()).find("CTNLI_OPENAI_KEY"), std::string::npos);
  }
}

TEST(InFlightBound, NeverExceedsConfiguredLimit) {
  StubServer stub;
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       int now = active.fetch_add(1) + 1;
                       int expected = peak.load();
                       while (now > expected && !peak.compare_exchange_weak(expected, now)) {
                       }
                       std::this_thread::sleep_for(std::chrono::milliseconds(30));
                       active.fetch_sub(1);
                       res.set_content(json{{"choices",
                                             {{{"message", {{"content", "OK"}}},
                                               {"finish_reason", "stop"}}}}}
                                           .dump(),
                                       "application/json");
                     });
  HostedConfig config = stub_config(stub.start());
  config.max_in_flight = 2;
  OpenAICompatBackend backend(config);

  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&, i] {
      GenerationConfig gen = openai_default_gen();
      backend.send(
          make_chat_request(backend.id(), one_message("q" + std::to_string(i)), gen));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
}

// ---------------------------------------------------------------------------
// Fixture recording
// ---------------------------------------------------------------------------

TEST(Recording, CapturedRunReplaysOffline) {
  StubServer stub;
  stub.server().Post("/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) {
                       res.set_content(json{{"choices",
                                             {{{"message", {{"content", "recorded"}}},
                                               {"finish_reason", "stop"}}}}}
                                           .dump(),
                                       "application/json");
                     });
  TempDir dir;
  auto hosted = std::make_shared<OpenAICompatBackend>(stub_config(stub.start()));
  RecordingBackend recorder(hosted, dir.path / "fixture.json");

  ChatRequest request =
      make_chat_request(recorder.id(), one_message(), openai_default_gen());
  EXPECT_EQ(recorder.send(request).text, "recorded");
  stub.stop();

  auto replay = MockReplayBackend::from_file(dir.path / "fixture.json");
  EXPECT_EQ(replay->id(), "openai");
  EXPECT_EQ(replay->send(request).text, "recorded");
}

}  // namespace
}  // namespace ctnli
