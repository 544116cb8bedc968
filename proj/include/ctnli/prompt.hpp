#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctnli/chat.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/errors.hpp"
#include "ctnli/hash.hpp"

namespace ctnli {

// ---------------------------------------------------------------------------
// Reasoning modes
// ---------------------------------------------------------------------------

enum class ReasoningMode { Plain, CoT, ToT, ToTplusCoT };

inline const char* to_string(ReasoningMode m) {
  switch (m) {
    case ReasoningMode::Plain: return "plain";
    case ReasoningMode::CoT: return "cot";
    case ReasoningMode::ToT: return "tot";
    case ReasoningMode::ToTplusCoT: return "tot-cot";
  }
  return "?";
}

inline ReasoningMode parse_mode(const std::string& s) {
  if (s == "plain") return ReasoningMode::Plain;
  if (s == "cot") return ReasoningMode::CoT;
  if (s == "tot") return ReasoningMode::ToT;
  if (s == "tot-cot" || s == "tot+cot") return ReasoningMode::ToTplusCoT;
  throw Error("unknown reasoning mode: " + s + " (expected plain|cot|tot|tot-cot)");
}

inline constexpr ReasoningMode kAllModes[] = {
    ReasoningMode::Plain, ReasoningMode::CoT, ReasoningMode::ToT,
    ReasoningMode::ToTplusCoT};

inline bool mode_has_cot(ReasoningMode m) {
  return m == ReasoningMode::CoT || m == ReasoningMode::ToTplusCoT;
}

inline bool mode_has_tot(ReasoningMode m) {
  return m == ReasoningMode::ToT || m == ReasoningMode::ToTplusCoT;
}

// ---------------------------------------------------------------------------
// Extraction prompt catalog
// ---------------------------------------------------------------------------

struct ExtractionPrompt {
  int prompt_id = 0;
  std::string text;
  std::optional<double> dev_f1;  // documentation metadata

  bool operator==(const ExtractionPrompt&) const = default;
};

inline constexpr int kDefaultExtractionPromptId = 4;

inline const std::vector<ExtractionPrompt>& list_extraction_prompts() {
  static const std::vector<ExtractionPrompt> catalog = {
      {1,
       "Based on the comprehensive evaluation of the model's responses, is the "
       "given hypothesis deemed to be true or false? Write one word answer.",
       0.689},
      {2,
       "Does this imply that the given hypothesis is supporting the report or "
       "not? Give one word answer (Yes / No).",
       0.667},
      {3,
       "From your answer above, is the statement true or false? Write one word "
       "answer.",
       0.656},
      {4,
       "Based on your explanation, does the given context imply the hypothesis. "
       "Write one word answer.",
       0.723},
  };
  return catalog;
}

inline const ExtractionPrompt& extraction_prompt(int prompt_id) {
  for (const auto& prompt : list_extraction_prompts()) {
    if (prompt.prompt_id == prompt_id) return prompt;
  }
  throw UnknownPromptId(prompt_id);
}

// ---------------------------------------------------------------------------
// Template pack
// ---------------------------------------------------------------------------

// The turn-1 fragments, overridable one file per fragment (<name>.txt) from a
// template-pack directory. Slots: {context} and {hypothesis}.
inline const std::vector<std::pair<std::string, std::string>>& default_fragments() {
  static const std::vector<std::pair<std::string, std::string>> fragments = {
      {"tot_scaffold",
       "Imagine three different clinical experts are answering this question. "
       "Each expert writes down one step of their reasoning, then shares it "
       "with the group. All experts then move on to the next step, and so on. "
       "If any expert realises their reasoning is wrong at any point, they "
       "leave the discussion."},
      {"identity",
       "You are a clinical expert and can seamlessly perform natural language "
       "inference."},
      {"rule",
       "Please align with the context given and do not make any false "
       "assumptions of your own."},
      {"context", "Context: {context}"},
      {"hypothesis", "Hypothesis: {hypothesis}"},
      {"cot_step", "Provide a step-by-step explanation of your thought process."},
      {"explanation_request",
       "Explain whether the hypothesis follows from the given context."},
      {"cot_tail", "Let's think step by step"},
  };
  return fragments;
}

class TemplatePack {
 public:
  static TemplatePack defaults() { return TemplatePack(); }

  // Defaults plus any <fragment>.txt overrides found in `dir`.
  static TemplatePack load(const std::optional<std::filesystem::path>& dir) {
    TemplatePack pack;
    if (!dir) return pack;
    if (!std::filesystem::is_directory(*dir)) {
      throw Error("template pack is not a directory: " + dir->string());
    }
    for (auto& [name, text] : pack.fragments_) {
      std::filesystem::path file = *dir / (name + ".txt");
      if (std::filesystem::is_regular_file(file)) {
        std::string content = read_file(file);
        if (!content.empty() && content.back() == '\n') content.pop_back();
        text = std::move(content);
        pack.overridden_.push_back(name);
      }
    }
    return pack;
  }

  const std::string& fragment(const std::string& name) const {
    for (const auto& [key, text] : fragments_) {
      if (key == name) return text;
    }
    throw Error("unknown template fragment: " + name);
  }

  const std::vector<std::string>& overridden() const { return overridden_; }

  // Content digest of the effective fragments; recorded in run metadata.
  std::string digest() const {
    std::string joined;
    for (const auto& [name, text] : fragments_) {
      joined += name;
      joined.push_back('\0');
      joined += text;
      joined.push_back('\0');
    }
    return sha256_hex(joined);
  }

 private:
  TemplatePack() : fragments_(default_fragments()) {}

  std::vector<std::pair<std::string, std::string>> fragments_;
  std::vector<std::string> overridden_;
};

namespace detail {

// Single left-to-right pass; substituted values are never rescanned.
inline std::string fill_slots(std::string_view tmpl, std::string_view context,
                              std::string_view hypothesis) {
  static constexpr std::string_view kContextSlot = "{context}";
  static constexpr std::string_view kHypothesisSlot = "{hypothesis}";
  std::string out;
  out.reserve(tmpl.size() + context.size() + hypothesis.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    if (tmpl.compare(pos, kContextSlot.size(), kContextSlot) == 0) {
      out += context;
      pos += kContextSlot.size();
    } else if (tmpl.compare(pos, kHypothesisSlot.size(), kHypothesisSlot) == 0) {
      out += hypothesis;
      pos += kHypothesisSlot.size();
    } else {
      out.push_back(tmpl[pos]);
      ++pos;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Turn rendering
// ---------------------------------------------------------------------------

// Turn-1 block order: ToT scaffold (ToT modes), identity, rule, context,
// hypothesis, step-by-step request (CoT modes), explanation request, and the
// terminal CoT phrase (CoT modes). Blocks are joined with blank lines and are
// never altered by mode, only included or left out.
inline std::string build_turn1(const std::string& premise, const std::string& hypothesis,
                               ReasoningMode mode,
                               const TemplatePack& pack = TemplatePack::defaults()) {
  if (premise.empty()) throw EmptyInput("premise is empty");
  if (hypothesis.empty()) throw EmptyInput("hypothesis is empty");

  std::vector<std::string> blocks;
  if (mode_has_tot(mode)) blocks.push_back(pack.fragment("tot_scaffold"));
  blocks.push_back(pack.fragment("identity"));
  blocks.push_back(pack.fragment("rule"));
  blocks.push_back(detail::fill_slots(pack.fragment("context"), premise, hypothesis));
  blocks.push_back(detail::fill_slots(pack.fragment("hypothesis"), premise, hypothesis));
  if (mode_has_cot(mode)) blocks.push_back(pack.fragment("cot_step"));
  blocks.push_back(pack.fragment("explanation_request"));
  if (mode_has_cot(mode)) blocks.push_back(pack.fragment("cot_tail"));

  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += blocks[i];
  }
  return out;
}

// Turn 2 is the catalog text verbatim.
inline std::string build_turn2(const ExtractionPrompt& extraction) {
  return extraction_prompt(extraction.prompt_id).text;
}

// ---------------------------------------------------------------------------
// Conversation scripts
// ---------------------------------------------------------------------------

struct ConversationScript {
  std::vector<ChatMessage> turns;  // exactly two pending User turns
  ReasoningMode mode = ReasoningMode::Plain;
  ExtractionPrompt extraction;
  GenerationConfig gen;
  std::string statement_id;

  bool operator==(const ConversationScript&) const = default;
};

inline ConversationScript render_script(const Corpus& corpus, const StatementInstance& stmt,
                                        ReasoningMode mode, const ExtractionPrompt& extraction,
                                        const GenerationConfig& gen,
                                        const TemplatePack& pack = TemplatePack::defaults()) {
  ConversationScript script;
  script.mode = mode;
  script.extraction = extraction_prompt(extraction.prompt_id);
  script.gen = gen;
  script.statement_id = stmt.statement_id;
  std::string premise = assemble_premise(corpus, stmt);
  script.turns.push_back({Role::User, build_turn1(premise, stmt.text, mode, pack)});
  script.turns.push_back({Role::User, build_turn2(script.extraction)});
  return script;
}

}  // namespace ctnli
