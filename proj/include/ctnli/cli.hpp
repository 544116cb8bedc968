#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctnli/backend.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/eval.hpp"
#include "ctnli/infer.hpp"
#include "ctnli/prompt.hpp"

namespace ctnli::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitCompletedWithFailures = 2;

// Effective settings after layering: flags > environment > config file >
// built-in defaults. String fields use "" as unset, numeric fields -1.
struct CliConfig {
  std::string config_file;

  std::string ctr_dir;
  std::string statements;
  std::string manifest;

  std::string mode = "plain";
  int extract = kDefaultExtractionPromptId;
  std::string backend = "mock";
  std::string model;
  double temperature = -1.0;
  int max_output_tokens = -1;
  std::string safety_setting;
  int concurrency = 1;
  std::string cache_dir;
  std::string run_dir;
  bool resume = false;
  std::string fixtures;
  std::string record_fixtures;
  std::string template_pack;
  std::string base_url;
  int max_in_flight = 8;
  int retry_attempts = 5;
  int retry_base_ms = 1000;
};

namespace detail {

inline void report_error(const std::string& message) {
  std::cerr << "ctnli: error: " << message << "\n";
}

// Fills fields the user did not pass on the command line from the
// environment, then the config file.
inline void merge_layers(CliConfig& config, const CLI::App& cmd) {
  auto given = [&](const std::string& flag) {
    const CLI::Option* opt = cmd.get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };

  if (!given("--cache-dir") && config.cache_dir.empty()) {
    config.cache_dir = env_or_empty("CTNLI_CACHE_DIR");
  }

  if (config.config_file.empty()) return;
  json doc = parse_json_file(config.config_file);
  if (!doc.is_object()) {
    throw Error("config file is not a JSON object: " + config.config_file);
  }
  auto str = [&](const std::string& flag, const char* key, std::string& out) {
    const json* v = find_field(doc, {key});
    if (!given(flag) && v && v->is_string() && out.empty()) out = v->get<std::string>();
  };
  auto str_default = [&](const std::string& flag, const char* key, std::string& out) {
    const json* v = find_field(doc, {key});
    if (!given(flag) && v && v->is_string()) out = v->get<std::string>();
  };
  auto num = [&](const std::string& flag, const char* key, auto& out) {
    const json* v = find_field(doc, {key});
    if (!given(flag) && v && v->is_number()) out = v->get<std::decay_t<decltype(out)>>();
  };
  str("--ctr-dir", "ctr_dir", config.ctr_dir);
  str("--statements", "statements", config.statements);
  str("--manifest", "manifest", config.manifest);
  str_default("--mode", "mode", config.mode);
  num("--extract", "extract", config.extract);
  str_default("--backend", "backend", config.backend);
  str("--model", "model", config.model);
  num("--temperature", "temperature", config.temperature);
  num("--max-output-tokens", "max_output_tokens", config.max_output_tokens);
  str("--safety-setting", "safety_setting", config.safety_setting);
  num("--concurrency", "concurrency", config.concurrency);
  str("--cache-dir", "cache_dir", config.cache_dir);
  str("--run-dir", "run_dir", config.run_dir);
  str("--fixtures", "fixtures", config.fixtures);
  str("--template-pack", "template_pack", config.template_pack);
  str("--base-url", "base_url", config.base_url);
  num("--max-in-flight", "max_in_flight", config.max_in_flight);
  num("--retry-attempts", "retry_attempts", config.retry_attempts);
  num("--retry-base-ms", "retry_base_ms", config.retry_base_ms);
}

inline Corpus load_corpus_from(const CliConfig& config) {
  if (config.ctr_dir.empty()) throw Error("--ctr-dir is required");
  if (config.statements.empty()) throw Error("--statements is required");
  std::optional<std::filesystem::path> manifest;
  if (!config.manifest.empty()) manifest = config.manifest;
  return load_corpus(config.ctr_dir, config.statements, manifest);
}

inline GenerationConfig gen_from(const CliConfig& config, BackendKind kind) {
  GenerationConfig gen = default_gen_for(kind);
  if (!config.model.empty()) gen.model_name = config.model;
  if (config.temperature >= 0.0) gen.temperature = config.temperature;
  if (config.max_output_tokens > 0) gen.max_output_tokens = config.max_output_tokens;
  if (!config.safety_setting.empty()) gen.safety_setting = config.safety_setting;
  return gen;
}

inline std::shared_ptr<ChatBackend> backend_from(const CliConfig& config, BackendKind kind) {
  BackendOptions options;
  options.kind = kind;
  options.base_url = config.base_url;
  options.retry.max_attempts = config.retry_attempts;
  options.retry.base_delay = std::chrono::milliseconds(config.retry_base_ms);
  options.max_in_flight = config.max_in_flight;
  if (!config.fixtures.empty()) options.fixtures = config.fixtures;
  std::shared_ptr<ChatBackend> backend = make_backend(options);
  if (!config.record_fixtures.empty()) {
    backend = std::make_shared<RecordingBackend>(backend, config.record_fixtures);
  }
  if (!config.cache_dir.empty()) {
    backend = with_cache(backend, config.cache_dir);
  }
  return backend;
}

inline RunPlan plan_from(const CliConfig& config, BackendKind kind) {
  RunPlan plan;
  plan.mode = parse_mode(config.mode);
  plan.extraction_id = config.extract;
  plan.backend_kind = kind;
  plan.gen = gen_from(config, kind);
  plan.concurrency = config.concurrency;
  if (!config.cache_dir.empty()) plan.cache_dir = config.cache_dir;
  plan.run_dir = config.run_dir;
  if (!config.template_pack.empty()) plan.template_pack_dir = config.template_pack;
  return plan;
}

// ---- run ----

inline int cmd_run(const CliConfig& config) {
  if (config.run_dir.empty()) throw Error("--run-dir is required");
  Corpus corpus = load_corpus_from(config);
  BackendKind kind = parse_backend_kind(config.backend);
  RunPlan plan = plan_from(config, kind);
  TemplatePack pack = TemplatePack::load(plan.template_pack_dir);
  auto backend = backend_from(config, kind);

  const bool existing = std::filesystem::exists(plan.run_dir / "plan");
  RunArtifact artifact;
  if (config.resume) {
    if (!existing) throw Error("--resume given but no plan snapshot in " + config.run_dir);
    artifact = resume(corpus, plan, *backend, pack);
  } else {
    if (existing) {
      throw Error("run_dir already holds a run: " + config.run_dir +
                  " (pass --resume to continue it)");
    }
    artifact = run_batch(corpus, plan, *backend, pack);
  }

  std::cout << "run " << (artifact.status == RunArtifact::Status::Complete ? "complete"
                                                                           : "partial")
            << ": " << artifact.predictions.size() << " predictions, "
            << artifact.failures.size() << " failures -> "
            << (plan.run_dir / "predictions.jsonl").string() << "\n";
  if (artifact.status != RunArtifact::Status::Complete || !artifact.failures.empty()) {
    return kExitCompletedWithFailures;
  }
  return kExitOk;
}

// ---- eval ----

inline int cmd_eval(const CliConfig& config, const std::string& predictions_path,
                    const std::string& report_out, bool faithfulness_unrestricted) {
  std::filesystem::path predictions_file;
  if (!predictions_path.empty()) {
    predictions_file = predictions_path;
  } else if (!config.run_dir.empty()) {
    predictions_file = std::filesystem::path(config.run_dir) / "predictions.jsonl";
  } else {
    throw Error("pass --run-dir or --predictions");
  }
  if (!std::filesystem::exists(predictions_file)) {
    throw Error("predictions file not found: " + predictions_file.string());
  }

  Corpus corpus = load_corpus_from(config);
  if (config.manifest.empty()) {
    std::cerr << "notice: no manifest given; consistency and faithfulness are not computed\n";
  }

  std::vector<PredictionRecord> predictions;
  {
    std::ifstream in(predictions_file, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) predictions.push_back(prediction_from_json(json::parse(line)));
    }
  }

  std::string plan_digest_value;
  if (!config.run_dir.empty()) {
    std::filesystem::path plan_path = std::filesystem::path(config.run_dir) / "plan";
    if (std::filesystem::exists(plan_path)) {
      plan_digest_value = parse_json_file(plan_path).value("plan_digest", "");
    }
  }

  FaithfulnessOptions options;
  options.base_correct_only = !faithfulness_unrestricted;
  EvaluationReport result = report(predictions, corpus, options, plan_digest_value);

  std::filesystem::path json_out;
  if (!report_out.empty()) {
    json_out = report_out;
  } else if (!config.run_dir.empty()) {
    json_out = std::filesystem::path(config.run_dir) / "report.json";
  } else {
    throw Error("pass --report-out when evaluating a bare predictions file");
  }
  write_file_atomic(json_out, report_to_json(result).dump(2) + "\n");
  std::filesystem::path text_out = json_out;
  text_out.replace_extension(".txt");
  write_file_atomic(text_out, report_to_text(result));

  std::cout << summary_line(result) << "\n";
  return kExitOk;
}

// ---- compare ----

inline int cmd_compare(const CliConfig& config, const std::vector<std::string>& run_dirs) {
  if (run_dirs.size() < 2) throw Error("compare needs at least two run directories");

  std::optional<Corpus> corpus;
  std::vector<EvaluationReport> reports;
  std::vector<std::string> labels;
  for (const auto& dir : run_dirs) {
    std::filesystem::path run_dir(dir);
    std::string label = run_dir.filename().string();
    if (label.empty()) label = run_dir.parent_path().filename().string();
    std::filesystem::path plan_path = run_dir / "plan";
    if (std::filesystem::exists(plan_path)) {
      std::string mode = parse_json_file(plan_path).value("mode", "");
      if (!mode.empty()) label += " [" + mode + "]";
    }
    labels.push_back(label);

    std::filesystem::path report_path = run_dir / "report.json";
    if (std::filesystem::exists(report_path)) {
      reports.push_back(report_from_json(parse_json_file(report_path)));
      continue;
    }
    if (config.ctr_dir.empty() || config.statements.empty()) {
      throw Error("no report.json in " + dir + "; run `ctnli eval --run-dir " + dir +
                  "` first or pass corpus flags");
    }
    if (!corpus) corpus = load_corpus_from(config);
    RunArtifact artifact = load_run_artifact(run_dir);
    reports.push_back(report(artifact.predictions, *corpus));
  }

  ComparisonTable table = compare_runs(reports, labels);
  std::cout << comparison_to_text(table);
  return kExitOk;
}

// ---- inspect ----

inline int cmd_inspect(const CliConfig& config, const std::string& statement_id) {
  if (config.run_dir.empty()) throw Error("--run-dir is required");
  std::filesystem::path transcript_path =
      std::filesystem::path(config.run_dir) / "transcripts" / (statement_id + ".json");
  if (!std::filesystem::exists(transcript_path)) {
    throw UnknownStatement(statement_id);
  }
  json transcript = parse_json_file(transcript_path);

  std::cout << "statement " << statement_id << "\n";
  std::cout << "mode " << transcript.value("mode", "?") << ", extraction prompt "
            << transcript.value("extraction_id", 0) << ", model "
            << transcript.value("model", "?") << "\n\n";
  std::cout << "premise:\n  " << transcript.value("premise", "") << "\n\n";
  std::cout << "hypothesis:\n  " << transcript.value("hypothesis", "") << "\n\n";
  if (transcript.contains("messages")) {
    for (const auto& message : transcript.at("messages")) {
      std::cout << "[" << message.value("role", "?") << "]\n"
                << message.value("text", "") << "\n\n";
    }
  }
  std::string parsed = transcript.value("parsed", "Unparsed");
  std::cout << "parsed: " << parsed;
  if (!transcript.value("parse_rule", json(nullptr)).is_null()) {
    std::cout << " (rule " << transcript.at("parse_rule").get<std::string>() << ")";
  }
  std::cout << "\n";
  if (parsed == "Unparsed") {
    std::cout << "PARSE FAILURE: no normalization rule matched the raw verdict above\n";
  }
  if (!transcript.value("gold", json(nullptr)).is_null()) {
    std::cout << "gold: " << transcript.at("gold").get<std::string>() << "\n";
  }
  if (!transcript.value("failure", json(nullptr)).is_null()) {
    const json& failure = transcript.at("failure");
    std::cout << "failure at " << failure.value("stage", "?") << ": "
              << failure.value("cause", "?") << "\n";
  }
  return kExitOk;
}

// ---- cache gc ----

inline int cmd_cache_gc(const std::string& cache_dir, int max_age_days) {
  if (cache_dir.empty()) throw Error("--cache-dir (or CTNLI_CACHE_DIR) is required");
  if (!std::filesystem::is_directory(cache_dir)) {
    throw Error("cache dir does not exist: " + cache_dir);
  }
  std::size_t kept = 0;
  std::size_t corrupt = 0;
  std::size_t expired = 0;
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  for (const auto& entry : std::filesystem::directory_iterator(cache_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    bool drop = false;
    try {
      json doc = json::parse(read_file(entry.path()));
      std::string key = entry.path().stem().string();
      if (!ctnli::detail::entry_reply(doc, key, /*require_checksum=*/true)) drop = true;
      if (!drop && max_age_days > 0) {
        long long created = doc.value("created_unix_ms", 0LL);
        if (now - created > static_cast<long long>(max_age_days) * 86'400'000LL) {
          ++expired;
          std::filesystem::remove(entry.path());
          continue;
        }
      }
    } catch (const std::exception&) {
      drop = true;
    }
    if (drop) {
      ++corrupt;
      std::filesystem::remove(entry.path());
    } else {
      ++kept;
    }
  }
  std::cout << "cache gc: kept " << kept << ", removed " << corrupt << " corrupt, " << expired
            << " expired\n";
  return kExitOk;
}

// ---- prompts list ----

inline int cmd_prompts_list() {
  std::cout << "extraction prompts (turn 2):\n";
  for (const auto& prompt : list_extraction_prompts()) {
    char dev_f1[32] = "   -  ";
    if (prompt.dev_f1) std::snprintf(dev_f1, sizeof(dev_f1), "%.3f", *prompt.dev_f1);
    std::cout << "  " << prompt.prompt_id << "  dev F1 " << dev_f1 << "  " << prompt.text
              << (prompt.prompt_id == kDefaultExtractionPromptId ? "  [default]" : "") << "\n";
  }
  return kExitOk;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Clinical-trial NLI batch inference and evaluation harness"};
  app.require_subcommand(1);

  CliConfig config;
  auto add_corpus_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config.config_file, "JSON config file mirroring flag names");
    cmd->add_option("--ctr-dir", config.ctr_dir,
                    "Directory of CTR JSON files, or one concatenated array file");
    cmd->add_option("--statements", config.statements, "Statements JSON file");
    cmd->add_option("--manifest", config.manifest, "Intervention-link manifest JSON file");
  };

  // run
  CLI::App* run_cmd = app.add_subcommand("run", "Execute the two-turn protocol over a corpus");
  add_corpus_flags(run_cmd);
  run_cmd->add_option("--mode", config.mode, "Reasoning mode: plain|cot|tot|tot-cot");
  run_cmd->add_option("--extract", config.extract, "Extraction prompt id (1-4)")
      ->check(CLI::Range(1, 4));
  run_cmd->add_option("--backend", config.backend, "Backend: openai|gemini|mock");
  run_cmd->add_option("--model", config.model, "Model name (default per backend)");
  run_cmd->add_option("--temperature", config.temperature, "Sampling temperature [0,2]");
  run_cmd->add_option("--max-output-tokens", config.max_output_tokens,
                      "Reply token budget (default 1024)");
  run_cmd->add_option("--safety-setting", config.safety_setting,
                      "Safety threshold tag (gemini; default BLOCK_NONE)");
  run_cmd->add_option("--concurrency", config.concurrency,
                      "Statements in flight at once (default 1)");
  run_cmd->add_option("--cache-dir", config.cache_dir,
                      "Response cache directory (env CTNLI_CACHE_DIR)");
  run_cmd->add_option("--run-dir", config.run_dir, "Run output directory");
  run_cmd->add_flag("--resume", config.resume, "Continue an interrupted run");
  run_cmd->add_option("--fixtures", config.fixtures, "Replay fixture file (mock backend)");
  run_cmd->add_option("--record-fixtures", config.record_fixtures,
                      "Record request/reply pairs into a replay fixture file");
  run_cmd->add_option("--template-pack", config.template_pack,
                      "Directory of prompt fragment overrides");
  run_cmd->add_option("--base-url", config.base_url, "Override the backend endpoint URL");
  run_cmd->add_option("--max-in-flight", config.max_in_flight,
                      "Concurrent request cap per backend (default 8)");
  run_cmd->add_option("--retry-attempts", config.retry_attempts,
                      "Attempt cap per request (default 5)");
  run_cmd->add_option("--retry-base-ms", config.retry_base_ms,
                      "Base backoff delay in ms (default 1000)");

  // eval
  std::string predictions_path;
  std::string report_out;
  bool faithfulness_unrestricted = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a run against gold labels");
  add_corpus_flags(eval_cmd);
  eval_cmd->add_option("--run-dir", config.run_dir, "Run directory holding predictions.jsonl");
  eval_cmd->add_option("--predictions", predictions_path, "Predictions file (JSON lines)");
  eval_cmd->add_option("--report-out", report_out, "Report JSON output path");
  eval_cmd->add_flag("--faithfulness-unrestricted", faithfulness_unrestricted,
                     "Score all altering pairs, not only base-correct ones");

  // compare
  std::vector<std::string> run_dirs;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "Compare metric reports across completed runs");
  add_corpus_flags(compare_cmd);
  compare_cmd->add_option("run_dirs", run_dirs, "Two or more run directories")
      ->expected(-1);

  // inspect
  std::string inspect_id;
  CLI::App* inspect_cmd =
      app.add_subcommand("inspect", "Pretty-print one statement's transcript");
  inspect_cmd->add_option("--run-dir", config.run_dir, "Run directory")->required();
  inspect_cmd->add_option("statement_id", inspect_id, "Statement to inspect")->required();

  // cache gc
  int max_age_days = 0;
  CLI::App* cache_cmd = app.add_subcommand("cache", "Response cache maintenance");
  cache_cmd->require_subcommand(1);
  CLI::App* gc_cmd = cache_cmd->add_subcommand("gc", "Drop corrupt and expired cache entries");
  gc_cmd->add_option("--cache-dir", config.cache_dir,
                     "Cache directory (env CTNLI_CACHE_DIR)");
  gc_cmd->add_option("--max-age-days", max_age_days,
                     "Also drop entries older than this many days");

  // prompts list
  CLI::App* prompts_cmd = app.add_subcommand("prompts", "Prompt catalog");
  prompts_cmd->require_subcommand(1);
  prompts_cmd->add_subcommand("list", "List the extraction prompt catalog");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (app.got_subcommand(run_cmd)) {
      detail::merge_layers(config, *run_cmd);
      return detail::cmd_run(config);
    }
    if (app.got_subcommand(eval_cmd)) {
      detail::merge_layers(config, *eval_cmd);
      return detail::cmd_eval(config, predictions_path, report_out, faithfulness_unrestricted);
    }
    if (app.got_subcommand(compare_cmd)) {
      detail::merge_layers(config, *compare_cmd);
      return detail::cmd_compare(config, run_dirs);
    }
    if (app.got_subcommand(inspect_cmd)) {
      return detail::cmd_inspect(config, inspect_id);
    }
    if (app.got_subcommand(cache_cmd)) {
      if (config.cache_dir.empty()) config.cache_dir = env_or_empty("CTNLI_CACHE_DIR");
      return detail::cmd_cache_gc(config.cache_dir, max_age_days);
    }
    if (app.got_subcommand(prompts_cmd)) {
      return detail::cmd_prompts_list();
    }
  } catch (const Error& ex) {
    detail::report_error(ex.what());
    return kExitConfigError;
  } catch (const std::exception& ex) {
    detail::report_error(ex.what());
    return kExitConfigError;
  }
  detail::report_error("no command selected");
  return kExitConfigError;
}

inline int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("ctnli");
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ctnli::cli
