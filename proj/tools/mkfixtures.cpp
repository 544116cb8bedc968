// Generates synthetic replay fixtures for the demo workflow: one fixture file
// per (model family, reasoning mode) pair, with scripted verdicts whose error
// rates thin out as reasoning scaffolds are added. All replies are fabricated;
// nothing here comes from a real model.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctnli/backend.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/infer.hpp"
#include "ctnli/prompt.hpp"

namespace {

using namespace ctnli;

struct ModelProfile {
  std::string tag;
  std::string model_name;
  double temperature;
  int error_bonus;  // larger -> fewer scripted mistakes
};

int error_period(ReasoningMode mode, int bonus) {
  switch (mode) {
    case ReasoningMode::Plain: return 3 + bonus;
    case ReasoningMode::CoT: return 4 + bonus;
    case ReasoningMode::ToT: return 5 + bonus;
    case ReasoningMode::ToTplusCoT: return 6 + bonus;
  }
  return 3;
}

json build_fixture(const Corpus& corpus, const ModelProfile& profile, ReasoningMode mode) {
  GenerationConfig gen = openai_default_gen();
  gen.model_name = profile.model_name;
  gen.temperature = profile.temperature;
  const TemplatePack pack = TemplatePack::defaults();
  const std::string backend_id = "mock";
  const int period = error_period(mode, profile.error_bonus);

  json fixture = json::object();
  int index = 0;
  for (const auto& [id, stmt] : corpus.statements()) {
    ConversationScript script =
        render_script(corpus, stmt, mode, extraction_prompt(kDefaultExtractionPromptId), gen, pack);

    std::string explanation = "Synthetic explanation for statement " + id +
                              ": the evidence lines were compared against the hypothesis.";
    bool truthful = (index % period) != period - 1;
    Label gold = stmt.gold.value_or(Label::Entailment);
    bool answer_yes = (gold == Label::Entailment) == truthful;
    std::string verdict = answer_yes ? "Yes" : "No";
    ++index;

    BackendReply reply1;
    reply1.text = explanation;
    std::string key1 = compute_request_key(backend_id, {script.turns[0]}, gen);
    fixture[key1] = detail::make_entry(key1, backend_id, gen, reply1);

    BackendReply reply2;
    reply2.text = verdict;
    std::vector<ChatMessage> followup = {script.turns[0],
                                         {Role::Assistant, explanation},
                                         script.turns[1]};
    std::string key2 = compute_request_key(backend_id, followup, gen);
    fixture[key2] = detail::make_entry(key2, backend_id, gen, reply2);
  }
  return fixture;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic replay fixtures (4 modes x 2 model families)"};
  std::string ctr_dir;
  std::string statements;
  std::string manifest;
  std::string out_dir;
  app.add_option("--ctr-dir", ctr_dir, "CTR directory or array file")->required();
  app.add_option("--statements", statements, "Statements JSON file")->required();
  app.add_option("--manifest", manifest, "Manifest JSON file");
  app.add_option("--out-dir", out_dir, "Output directory for fixture files")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<std::filesystem::path> manifest_path;
    if (!manifest.empty()) manifest_path = manifest;
    Corpus corpus = load_corpus(ctr_dir, statements, manifest_path);

    const std::vector<ModelProfile> profiles = {
        {"gpt", "gpt-3.5-turbo-0613", 0.6, 0},
        {"gemini", "gemini-pro", 0.7, 1},
    };
    std::filesystem::create_directories(out_dir);
    for (const auto& profile : profiles) {
      for (ReasoningMode mode : kAllModes) {
        json fixture = build_fixture(corpus, profile, mode);
        std::filesystem::path out = std::filesystem::path(out_dir) /
                                    ("fixtures_" + profile.tag + "_" + to_string(mode) + ".json");
        write_file_atomic(out, fixture.dump(2) + "\n");
        std::cout << "wrote " << out.string() << " (" << fixture.size() << " entries)\n";
      }
    }
  } catch (const std::exception& ex) {
    std::cerr << "mkfixtures: error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
