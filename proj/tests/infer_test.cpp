#include "ctnli/infer.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "support.hpp"

namespace ctnli {
namespace {

using testsupport::CountingBackend;
using testsupport::TempDir;

// ---------------------------------------------------------------------------
// parse_label
// ---------------------------------------------------------------------------

TEST(ParseLabel, SpecExamples) {
  ParseResult yes = parse_label("Yes.");
  EXPECT_EQ(yes.parsed, Parsed::Entailment);
  EXPECT_EQ(*yes.rule, "R1");

  ParseResult no = parse_label("No");
  EXPECT_EQ(no.parsed, Parsed::Contradiction);
  EXPECT_EQ(*no.rule, "R1");

  ParseResult false_word = parse_label("FALSE");
  EXPECT_EQ(false_word.parsed, Parsed::Contradiction);
  EXPECT_EQ(*false_word.rule, "R3");

  ParseResult conflict = parse_label("yes and no");
  EXPECT_EQ(conflict.parsed, Parsed::Unparsed);
  EXPECT_FALSE(conflict.rule.has_value());
}

TEST(ParseLabel, RulePriorities) {
  EXPECT_EQ(*parse_label("Yes, entailment").rule, "R1");   // R1 wins over R2
  EXPECT_EQ(*parse_label("Clearly entailment").rule, "R2");
  EXPECT_EQ(*parse_label("The statement is true").rule, "R3");
  EXPECT_EQ(parse_label("The answer is yes").parsed, Parsed::Unparsed);  // yes not leading
}

TEST(ParseLabel, WindowIsFirstTenTokens) {
  // "no" arrives as the 11th token: outside the window.
  std::string late = "one two three four five six seven eight nine ten no";
  EXPECT_EQ(parse_label(late).parsed, Parsed::Unparsed);
  std::string inside = "one two three four five six seven eight nine false";
  EXPECT_EQ(parse_label(inside).parsed, Parsed::Contradiction);
}

TEST(ParseLabel, PunctuationAndCaseVariants) {
  EXPECT_EQ(parse_label("**No**").parsed, Parsed::Contradiction);
  EXPECT_EQ(parse_label("yes!").parsed, Parsed::Entailment);
  EXPECT_EQ(parse_label("\"True\".").parsed, Parsed::Entailment);
  EXPECT_EQ(parse_label("CONTRADICTION.").parsed, Parsed::Contradiction);
  EXPECT_EQ(parse_label("  Entailment  ").parsed, Parsed::Entailment);
}

TEST(ParseLabel, TotalOnArbitraryInput) {
  EXPECT_EQ(parse_label("").parsed, Parsed::Unparsed);
  EXPECT_EQ(parse_label("   \t\n ").parsed, Parsed::Unparsed);
  EXPECT_EQ(parse_label("It depends on dosage").parsed, Parsed::Unparsed);

  std::mt19937 rng(7);
  std::uniform_int_distribution<int> byte(1, 255);
  for (int i = 0; i < 2000; ++i) {
    std::string noise;
    for (int j = 0; j < 40; ++j) noise.push_back(static_cast<char>(byte(rng)));
    ParseResult result = parse_label(noise);
    EXPECT_EQ(result.rule.has_value(), result.parsed != Parsed::Unparsed);
  }
}

// ---------------------------------------------------------------------------
// run_statement
// ---------------------------------------------------------------------------

TEST(RunStatement, TwoTurnProtocolProducesRecord) {
  Corpus corpus = testsupport::load_mini_corpus();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  auto script = testsupport::default_mini_script();
  auto mock = testsupport::scripted_backend(corpus, plan, script);

  StatementOutcome outcome = run_statement(corpus, corpus.statement("s01"), plan, *mock);
  EXPECT_EQ(outcome.record.parsed, Parsed::Entailment);
  EXPECT_EQ(*outcome.record.parse_rule, "R1");
  EXPECT_EQ(outcome.record.explanation, "Scripted analysis for s01.");
  EXPECT_EQ(outcome.record.raw_verdict, "Yes");
  EXPECT_FALSE(outcome.failure.has_value());

  // Two model replies; the Assistant turn between them is the first verbatim.
  const json& messages = outcome.transcript.at("messages");
  ASSERT_EQ(messages.size(), 4u);
  EXPECT_EQ(messages[0].at("role"), "user");
  EXPECT_EQ(messages[1].at("role"), "assistant");
  EXPECT_EQ(messages[1].at("text"), "Scripted analysis for s01.");
  EXPECT_EQ(messages[2].at("role"), "user");
  EXPECT_EQ(messages[2].at("text"), extraction_prompt(4).text);
  EXPECT_EQ(messages[3].at("role"), "assistant");
  EXPECT_EQ(messages[3].at("text"), "Yes");
}

TEST(RunStatement, NoVerdictMapping) {
  Corpus corpus = testsupport::load_mini_corpus();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  auto script = testsupport::default_mini_script();
  auto mock = testsupport::scripted_backend(corpus, plan, script);

  EXPECT_EQ(run_statement(corpus, corpus.statement("s02"), plan, *mock).record.parsed,
            Parsed::Contradiction);
  StatementOutcome unparsed = run_statement(corpus, corpus.statement("s11"), plan, *mock);
  EXPECT_EQ(unparsed.record.parsed, Parsed::Unparsed);
  EXPECT_FALSE(unparsed.record.parse_rule.has_value());
  EXPECT_FALSE(unparsed.failure.has_value());  // a reply arrived; it just didn't parse
}

TEST(RunStatement, BackendFailureBecomesRecordedFailure) {
  Corpus corpus = testsupport::load_mini_corpus();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  MockReplayBackend empty;  // every request misses

  StatementOutcome outcome = run_statement(corpus, corpus.statement("s01"), plan, empty);
  EXPECT_EQ(outcome.record.parsed, Parsed::Unparsed);
  EXPECT_FALSE(outcome.record.parse_rule.has_value());
  ASSERT_TRUE(outcome.failure.has_value());
  EXPECT_EQ(outcome.failure->stage, "turn1");
  EXPECT_NE(outcome.failure->cause.find("FixtureMiss"), std::string::npos);
}

// ---------------------------------------------------------------------------
// run_batch
// ---------------------------------------------------------------------------

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

TEST(RunBatch, CompleteDeterministicAndOrderedById) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;

  std::vector<std::string> outputs;
  for (int i = 0; i < 2; ++i) {
    RunPlan plan = testsupport::mini_plan(dir.path / ("run" + std::to_string(i)),
                                          ReasoningMode::ToTplusCoT, 4);
    auto mock = testsupport::scripted_backend(corpus, plan, script);
    RunArtifact artifact = run_batch(corpus, plan, *mock);
    EXPECT_EQ(artifact.status, RunArtifact::Status::Complete);
    EXPECT_EQ(artifact.predictions.size(), 12u);
    EXPECT_TRUE(artifact.failures.empty());
    for (std::size_t k = 1; k < artifact.predictions.size(); ++k) {
      EXPECT_LT(artifact.predictions[k - 1].statement_id,
                artifact.predictions[k].statement_id);
    }
    outputs.push_back(read_all(plan.run_dir / "predictions.jsonl"));
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(RunBatch, ConcurrencyDoesNotChangeBytes) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;
  std::vector<std::string> outputs;
  for (int concurrency : {1, 8}) {
    RunPlan plan = testsupport::mini_plan(dir.path / ("c" + std::to_string(concurrency)),
                                          ReasoningMode::CoT, concurrency);
    auto mock = testsupport::scripted_backend(corpus, plan, script);
    run_batch(corpus, plan, *mock);
    outputs.push_back(read_all(plan.run_dir / "predictions.jsonl"));
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(RunBatch, MissingFixturesMakeFailuresNotAborts) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  script.erase("s05");
  script.erase("s09");
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run", ReasoningMode::Plain, 3);
  auto mock = testsupport::scripted_backend(corpus, plan, script);

  RunArtifact artifact = run_batch(corpus, plan, *mock);
  EXPECT_EQ(artifact.status, RunArtifact::Status::Complete);
  EXPECT_EQ(artifact.predictions.size(), 12u);
  EXPECT_EQ(artifact.failures.size(), 2u);
  int unparsed = 0;
  for (const auto& record : artifact.predictions) {
    if (record.parsed == Parsed::Unparsed) ++unparsed;
  }
  // s05 and s09 failed; s11 is scripted to an unparseable verdict.
  EXPECT_EQ(unparsed, 3);
}

TEST(RunBatch, SelectionSubsetRuns) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  plan.selection = {"s03", "s01"};
  auto mock = testsupport::scripted_backend(corpus, plan, script);
  RunArtifact artifact = run_batch(corpus, plan, *mock);
  ASSERT_EQ(artifact.predictions.size(), 2u);
  EXPECT_EQ(artifact.predictions[0].statement_id, "s01");
  EXPECT_EQ(artifact.predictions[1].statement_id, "s03");

  RunPlan bad = testsupport::mini_plan(dir.path / "run2");
  bad.selection = {"ghost"};
  auto mock2 = testsupport::scripted_backend(corpus, bad, script);
  EXPECT_THROW(run_batch(corpus, bad, *mock2), UnknownStatement);
}

TEST(RunBatch, StatementDataErrorIsRecordedNotFatal) {
  // s11's trial (NCT10003) lacks a Results section; repointing the statement
  // at it makes premise assembly fail for that statement only.
  Corpus base = testsupport::load_mini_corpus(/*with_manifest=*/false);
  std::map<std::string, StatementInstance> statements = base.statements();
  statements.at("s11").section = SectionName::Results;
  Corpus corpus(base.trials(), std::move(statements), {});

  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run", ReasoningMode::Plain, 4);
  auto script = testsupport::default_mini_script();
  script.erase("s11");
  auto mock = testsupport::scripted_backend(corpus, plan, script);

  RunArtifact artifact = run_batch(corpus, plan, *mock);
  EXPECT_EQ(artifact.status, RunArtifact::Status::Complete);
  EXPECT_EQ(artifact.predictions.size(), 12u);
  ASSERT_EQ(artifact.failures.size(), 1u);
  EXPECT_EQ(artifact.failures[0].statement_id, "s11");
  EXPECT_EQ(artifact.failures[0].stage, "render");
}

TEST(RunBatch, CacheTransparency) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;

  RunPlan bare = testsupport::mini_plan(dir.path / "bare");
  auto mock1 = testsupport::scripted_backend(corpus, bare, script);
  run_batch(corpus, bare, *mock1);

  RunPlan cached_plan = testsupport::mini_plan(dir.path / "cached");
  auto cached = with_cache(testsupport::scripted_backend(corpus, cached_plan, script),
                           dir.path / "cache");
  run_batch(corpus, cached_plan, *cached);

  EXPECT_EQ(read_all(bare.run_dir / "predictions.jsonl"),
            read_all(cached_plan.run_dir / "predictions.jsonl"));
}

TEST(RunBatch, RefusesInvalidPlan) {
  Corpus corpus = testsupport::load_mini_corpus();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  plan.concurrency = 0;
  MockReplayBackend mock;
  EXPECT_THROW(run_batch(corpus, plan, mock), Error);
}

// ---------------------------------------------------------------------------
// resume
// ---------------------------------------------------------------------------

TEST(Resume, InterruptedRunReachesIdenticalBytes) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;

  // Uninterrupted reference run.
  RunPlan reference = testsupport::mini_plan(dir.path / "reference");
  auto mock_ref = testsupport::scripted_backend(corpus, reference, script);
  run_batch(corpus, reference, *mock_ref);
  std::string expected = read_all(reference.run_dir / "predictions.jsonl");

  // Simulated kill after 5 durable records plus one torn line.
  RunPlan plan = testsupport::mini_plan(dir.path / "resumed");
  {
    RunPlan donor = testsupport::mini_plan(dir.path / "donor");
    auto mock_donor = testsupport::scripted_backend(corpus, donor, script);
    run_batch(corpus, donor, *mock_donor);

    std::filesystem::create_directories(plan.run_dir / "transcripts");
    std::ifstream results(donor.run_dir / "results.jsonl", std::ios::binary);
    std::ofstream partial(plan.run_dir / "results.jsonl", std::ios::binary);
    std::string line;
    for (int i = 0; i < 5 && std::getline(results, line); ++i) {
      partial << line << "\n";
      json record = json::parse(line);
      std::string id = record.at("statement_id").get<std::string>();
      std::filesystem::copy_file(donor.run_dir / "transcripts" / (id + ".json"),
                                 plan.run_dir / "transcripts" / (id + ".json"));
    }
    if (std::getline(results, line)) {
      partial << line.substr(0, line.size() / 2);  // torn append
    }
    std::filesystem::copy_file(donor.run_dir / "plan", plan.run_dir / "plan");
  }

  auto counting = std::make_shared<CountingBackend>(
      testsupport::scripted_backend(corpus, plan, script));
  RunArtifact artifact = resume(corpus, plan, *counting);
  EXPECT_EQ(artifact.status, RunArtifact::Status::Complete);
  EXPECT_EQ(artifact.predictions.size(), 12u);
  EXPECT_EQ(counting->calls(), 7 * 2);  // 7 statements re-executed, 2 turns each
  EXPECT_EQ(read_all(plan.run_dir / "predictions.jsonl"), expected);
}

TEST(Resume, AlteredPlanRejected) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  auto mock = testsupport::scripted_backend(corpus, plan, script);
  run_batch(corpus, plan, *mock);

  RunPlan altered = plan;
  altered.gen.temperature = 1.5;
  EXPECT_THROW(resume(corpus, altered, *mock), PlanMismatch);
}

TEST(Resume, CompleteRunIsIdempotent) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run");
  auto mock = testsupport::scripted_backend(corpus, plan, script);
  run_batch(corpus, plan, *mock);
  std::string before = read_all(plan.run_dir / "predictions.jsonl");

  auto counting = std::make_shared<CountingBackend>(mock);
  RunArtifact artifact = resume(corpus, plan, *counting);
  EXPECT_EQ(artifact.status, RunArtifact::Status::Complete);
  EXPECT_EQ(counting->calls(), 0);
  EXPECT_EQ(read_all(plan.run_dir / "predictions.jsonl"), before);
}

TEST(Resume, ConcurrencyChangeIsAllowed) {
  Corpus corpus = testsupport::load_mini_corpus();
  auto script = testsupport::default_mini_script();
  TempDir dir;
  RunPlan plan = testsupport::mini_plan(dir.path / "run", ReasoningMode::Plain, 1);
  auto mock = testsupport::scripted_backend(corpus, plan, script);
  run_batch(corpus, plan, *mock);

  RunPlan wider = plan;
  wider.concurrency = 8;
  EXPECT_NO_THROW(resume(corpus, wider, *mock));
}

}  // namespace
}  // namespace ctnli
