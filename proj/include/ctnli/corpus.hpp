#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctnli/errors.hpp"
#include "ctnli/hash.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class SectionName { Eligibility, Intervention, Results, AdverseEvents };

inline constexpr SectionName kAllSections[] = {
    SectionName::Eligibility, SectionName::Intervention, SectionName::Results,
    SectionName::AdverseEvents};

inline const char* to_string(SectionName s) {
  switch (s) {
    case SectionName::Eligibility: return "Eligibility";
    case SectionName::Intervention: return "Intervention";
    case SectionName::Results: return "Results";
    case SectionName::AdverseEvents: return "Adverse Events";
  }
  return "?";
}

// Maps common spelling drift ("Adverse_Events", "adverse events") onto the
// canonical four names, case-insensitively.
inline std::optional<SectionName> try_parse_section(std::string_view name) {
  std::string canon;
  for (char c : name) {
    if (c == '_' || c == '-' || c == ' ') continue;
    canon.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (canon == "eligibility") return SectionName::Eligibility;
  if (canon == "intervention") return SectionName::Intervention;
  if (canon == "results") return SectionName::Results;
  if (canon == "adverseevents") return SectionName::AdverseEvents;
  return std::nullopt;
}

inline SectionName parse_section(std::string_view name) {
  if (auto s = try_parse_section(name)) return *s;
  throw UnknownSection(std::string(name));
}

enum class Label { Entailment, Contradiction };

inline const char* to_string(Label l) {
  return l == Label::Entailment ? "Entailment" : "Contradiction";
}

inline std::optional<Label> try_parse_label(std::string_view s) {
  std::string lower = to_lower(s);
  if (lower == "entailment") return Label::Entailment;
  if (lower == "contradiction") return Label::Contradiction;
  return std::nullopt;
}

enum class StatementType { Single, Comparison };

inline const char* to_string(StatementType t) {
  return t == StatementType::Single ? "Single" : "Comparison";
}

struct ClinicalTrialRecord {
  std::string trial_id;
  std::map<SectionName, std::vector<std::string>> sections;

  bool operator==(const ClinicalTrialRecord&) const = default;
};

struct StatementInstance {
  std::string statement_id;
  std::string text;
  StatementType stmt_type = StatementType::Single;
  SectionName section = SectionName::Eligibility;
  std::string primary_trial;
  std::optional<std::string> secondary_trial;
  std::optional<Label> gold;

  bool operator==(const StatementInstance&) const = default;
};

enum class LinkKind { Preserving, Altering };

inline const char* to_string(LinkKind k) {
  return k == LinkKind::Preserving ? "preserving" : "altering";
}

struct InterventionLink {
  std::string perturbed_id;
  std::string base_id;
  LinkKind kind = LinkKind::Preserving;

  bool operator==(const InterventionLink&) const = default;
};

// Immutable after load; safe to share across concurrent readers.
class Corpus {
 public:
  Corpus(std::map<std::string, ClinicalTrialRecord> trials,
         std::map<std::string, StatementInstance> statements,
         std::vector<InterventionLink> links)
      : trials_(std::move(trials)),
        statements_(std::move(statements)),
        links_(std::move(links)) {}

  const std::map<std::string, ClinicalTrialRecord>& trials() const { return trials_; }
  const std::map<std::string, StatementInstance>& statements() const { return statements_; }
  const std::vector<InterventionLink>& links() const { return links_; }

  const ClinicalTrialRecord& trial(const std::string& id) const {
    auto it = trials_.find(id);
    if (it == trials_.end()) throw UnknownTrial(id);
    return it->second;
  }

  const StatementInstance& statement(const std::string& id) const {
    auto it = statements_.find(id);
    if (it == statements_.end()) throw UnknownStatement(id);
    return it->second;
  }

  bool has_statement(const std::string& id) const { return statements_.count(id) > 0; }

  bool operator==(const Corpus&) const = default;

 private:
  std::map<std::string, ClinicalTrialRecord> trials_;
  std::map<std::string, StatementInstance> statements_;
  std::vector<InterventionLink> links_;
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace detail {

inline std::string json_to_line(const json& value, const std::string& locus) {
  if (!value.is_string()) throw MalformedRecord(locus, "evidence line is not a string");
  std::string line = value.get<std::string>();
  if (!line.empty() && line.back() == '\n') line.pop_back();
  return line;
}

inline ClinicalTrialRecord parse_ctr(const json& doc, const std::string& locus) {
  if (!doc.is_object()) throw MalformedRecord(locus, "CTR record is not an object");
  ClinicalTrialRecord ctr;

  const json* id = find_field(doc, {"trial_id", "clinical_trial_id"});
  if (!id || !id->is_string() || id->get<std::string>().empty()) {
    throw MalformedRecord(locus, "missing or empty trial_id");
  }
  ctr.trial_id = id->get<std::string>();

  auto add_section = [&](const std::string& name, const json& lines) {
    SectionName section = parse_section(name);
    if (!lines.is_array()) {
      throw MalformedRecord(locus, "section " + name + " is not an array");
    }
    std::vector<std::string> parsed;
    for (const auto& line : lines) parsed.push_back(json_to_line(line, locus));
    bool any_nonempty = false;
    for (const auto& line : parsed) {
      if (!line.empty()) {
        any_nonempty = true;
        break;
      }
    }
    if (parsed.empty() || !any_nonempty) {
      throw MalformedRecord(locus, "section " + name + " has no non-empty evidence line");
    }
    if (ctr.sections.count(section)) {
      throw MalformedRecord(locus, "section " + name + " given twice");
    }
    ctr.sections[section] = std::move(parsed);
  };

  if (const json* sections = find_field(doc, {"sections"})) {
    if (!sections->is_object()) throw MalformedRecord(locus, "sections is not an object");
    for (auto it = sections->begin(); it != sections->end(); ++it) {
      add_section(it.key(), it.value());
    }
  } else {
    // Flat layout: recognized section names at top level, other keys ignored.
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (try_parse_section(it.key()) && it.value().is_array()) {
        add_section(it.key(), it.value());
      }
    }
  }
  return ctr;
}

inline StatementInstance parse_statement(const json& doc, const std::string& fallback_id,
                                         const std::string& locus) {
  if (!doc.is_object()) throw MalformedRecord(locus, "statement record is not an object");
  StatementInstance stmt;

  const json* id = find_field(doc, {"statement_id", "id"});
  if (id && id->is_string()) {
    stmt.statement_id = id->get<std::string>();
  } else {
    stmt.statement_id = fallback_id;
  }
  if (stmt.statement_id.empty()) throw MalformedRecord(locus, "missing statement_id");
  const std::string where = locus + " [" + stmt.statement_id + "]";

  const json* text = find_field(doc, {"text", "statement"});
  if (!text || !text->is_string() || text->get<std::string>().empty()) {
    throw MalformedRecord(where, "missing or empty statement text");
  }
  stmt.text = text->get<std::string>();

  const json* type = find_field(doc, {"type"});
  if (!type || !type->is_string()) throw MalformedRecord(where, "missing statement type");
  std::string type_str = to_lower(type->get<std::string>());
  if (type_str == "single") {
    stmt.stmt_type = StatementType::Single;
  } else if (type_str == "comparison") {
    stmt.stmt_type = StatementType::Comparison;
  } else {
    throw MalformedRecord(where, "unknown statement type: " + type->get<std::string>());
  }

  const json* section = find_field(doc, {"section_id", "section"});
  if (!section || !section->is_string()) throw MalformedRecord(where, "missing section_id");
  stmt.section = parse_section(section->get<std::string>());

  const json* primary = find_field(doc, {"primary_id"});
  if (!primary || !primary->is_string() || primary->get<std::string>().empty()) {
    throw MalformedRecord(where, "missing primary_id");
  }
  stmt.primary_trial = primary->get<std::string>();

  const json* secondary = find_field(doc, {"secondary_id"});
  if (secondary && secondary->is_string() && !secondary->get<std::string>().empty()) {
    stmt.secondary_trial = secondary->get<std::string>();
  }
  if (stmt.stmt_type == StatementType::Comparison && !stmt.secondary_trial) {
    throw MalformedRecord(where, "Comparison statement lacks secondary_id");
  }
  if (stmt.stmt_type == StatementType::Single && stmt.secondary_trial) {
    throw MalformedRecord(where, "Single statement carries secondary_id");
  }

  const json* label = find_field(doc, {"label"});
  if (label && label->is_string()) {
    auto parsed = try_parse_label(label->get<std::string>());
    if (!parsed) throw MalformedRecord(where, "unknown label: " + label->get<std::string>());
    stmt.gold = parsed;
  }
  return stmt;
}

inline InterventionLink parse_link(const json& doc, const std::string& locus) {
  if (!doc.is_object()) throw MalformedRecord(locus, "manifest entry is not an object");
  InterventionLink link;
  const json* perturbed = find_field(doc, {"perturbed_id"});
  const json* base = find_field(doc, {"base_id"});
  const json* kind = find_field(doc, {"kind"});
  if (!perturbed || !perturbed->is_string() || !base || !base->is_string() ||
      !kind || !kind->is_string()) {
    throw MalformedRecord(locus, "manifest entry needs perturbed_id, base_id, kind");
  }
  link.perturbed_id = perturbed->get<std::string>();
  link.base_id = base->get<std::string>();
  std::string kind_str = to_lower(kind->get<std::string>());
  if (kind_str == "preserving") {
    link.kind = LinkKind::Preserving;
  } else if (kind_str == "altering") {
    link.kind = LinkKind::Altering;
  } else {
    throw MalformedRecord(locus, "unknown link kind: " + kind->get<std::string>());
  }
  if (link.perturbed_id == link.base_id) {
    throw MalformedRecord(locus, "link maps statement to itself: " + link.base_id);
  }
  return link;
}

}  // namespace detail

// `ctr_path` is either a directory of per-trial JSON files or a single JSON
// array file. The statements file is a JSON map (id -> record) or array.
inline Corpus load_corpus(const std::filesystem::path& ctr_path,
                          const std::filesystem::path& statements_path,
                          const std::optional<std::filesystem::path>& manifest_path = {}) {
  namespace fs = std::filesystem;

  std::map<std::string, ClinicalTrialRecord> trials;
  auto add_ctr = [&](const json& doc, const std::string& locus) {
    ClinicalTrialRecord ctr = detail::parse_ctr(doc, locus);
    if (trials.count(ctr.trial_id)) throw DuplicateId(ctr.trial_id);
    trials.emplace(ctr.trial_id, std::move(ctr));
  };

  if (fs::is_directory(ctr_path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(ctr_path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) add_ctr(parse_json_file(file), file.string());
  } else if (fs::is_regular_file(ctr_path)) {
    json doc = parse_json_file(ctr_path);
    if (doc.is_array()) {
      std::size_t index = 0;
      for (const auto& item : doc) {
        add_ctr(item, ctr_path.string() + "#" + std::to_string(index++));
      }
    } else {
      add_ctr(doc, ctr_path.string());
    }
  } else {
    throw Error("CTR path does not exist: " + ctr_path.string());
  }

  std::map<std::string, StatementInstance> statements;
  auto add_statement = [&](StatementInstance stmt) {
    if (statements.count(stmt.statement_id)) throw DuplicateId(stmt.statement_id);
    if (!trials.count(stmt.primary_trial)) {
      throw MissingTrialReference(stmt.statement_id, stmt.primary_trial);
    }
    if (stmt.secondary_trial && !trials.count(*stmt.secondary_trial)) {
      throw MissingTrialReference(stmt.statement_id, *stmt.secondary_trial);
    }
    statements.emplace(stmt.statement_id, std::move(stmt));
  };

  const std::string stmt_locus = statements_path.string();
  json stmts_doc = parse_json_file(statements_path);
  if (stmts_doc.is_object()) {
    for (auto it = stmts_doc.begin(); it != stmts_doc.end(); ++it) {
      add_statement(detail::parse_statement(it.value(), it.key(), stmt_locus));
    }
  } else if (stmts_doc.is_array()) {
    std::size_t index = 0;
    for (const auto& item : stmts_doc) {
      add_statement(detail::parse_statement(
          item, "", stmt_locus + "#" + std::to_string(index++)));
    }
  } else {
    throw MalformedRecord(stmt_locus, "statements file is neither a map nor an array");
  }

  std::vector<InterventionLink> links;
  if (manifest_path) {
    const std::string locus = manifest_path->string();
    json doc = parse_json_file(*manifest_path);
    if (!doc.is_array()) throw MalformedRecord(locus, "manifest is not an array");
    for (const auto& item : doc) {
      InterventionLink link = detail::parse_link(item, locus);
      auto perturbed = statements.find(link.perturbed_id);
      auto base = statements.find(link.base_id);
      if (perturbed == statements.end()) throw DanglingLink(link.perturbed_id);
      if (base == statements.end()) throw DanglingLink(link.base_id);
      const auto& pg = perturbed->second.gold;
      const auto& bg = base->second.gold;
      if (pg && bg) {
        if (link.kind == LinkKind::Altering && *pg == *bg) {
          throw MalformedRecord(locus, "altering link " + link.perturbed_id +
                                           " has matching gold labels");
        }
        if (link.kind == LinkKind::Preserving && *pg != *bg) {
          throw MalformedRecord(locus, "preserving link " + link.perturbed_id +
                                           " has differing gold labels");
        }
      }
      links.push_back(std::move(link));
    }
  }

  return Corpus(std::move(trials), std::move(statements), std::move(links));
}

// ---------------------------------------------------------------------------
// Section lookup and premise assembly
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& get_section(const Corpus& corpus,
                                                   const std::string& trial_id,
                                                   SectionName section) {
  const ClinicalTrialRecord& ctr = corpus.trial(trial_id);
  auto it = ctr.sections.find(section);
  if (it == ctr.sections.end()) throw SectionAbsent(trial_id, to_string(section));
  return it->second;
}

inline constexpr std::string_view kPrimaryMarker = "For the primary trial participants, ";
inline constexpr std::string_view kSecondaryMarker = "For the secondary trial participants, ";

namespace detail {

// Lines joined with a single space; a terminal "." is added to any line that
// does not already end in '.', '!' or '?'.
inline std::string join_evidence(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += lines[i];
    if (lines[i].empty() ||
        (lines[i].back() != '.' && lines[i].back() != '!' && lines[i].back() != '?')) {
      out.push_back('.');
    }
  }
  return out;
}

}  // namespace detail

inline std::string assemble_premise(const Corpus& corpus, const StatementInstance& stmt) {
  if (!corpus.trials().count(stmt.primary_trial)) {
    throw MissingTrialReference(stmt.statement_id, stmt.primary_trial);
  }
  std::string premise{kPrimaryMarker};
  premise += detail::join_evidence(get_section(corpus, stmt.primary_trial, stmt.section));
  if (stmt.stmt_type == StatementType::Comparison) {
    if (!stmt.secondary_trial || !corpus.trials().count(*stmt.secondary_trial)) {
      throw MissingTrialReference(stmt.statement_id,
                                  stmt.secondary_trial.value_or("<unset>"));
    }
    premise.push_back(' ');
    premise += kSecondaryMarker;
    premise += detail::join_evidence(get_section(corpus, *stmt.secondary_trial, stmt.section));
  }
  return premise;
}

// ---------------------------------------------------------------------------
// Split validation
// ---------------------------------------------------------------------------

struct SplitExpectation {
  std::string name;
  std::size_t total = 0;
  std::size_t entailment = 0;
  std::size_t contradiction = 0;
};

// Official subset sizes, usable as loader sanity fixtures.
inline const SplitExpectation kTrainSplit{"train", 1700, 850, 850};
inline const SplitExpectation kDevSplit{"dev", 200, 100, 100};
inline const SplitExpectation kTestSplit{"test", 5500, 1841, 3659};

struct SplitReport {
  SplitExpectation expected;
  std::size_t actual_total = 0;
  std::size_t actual_entailment = 0;
  std::size_t actual_contradiction = 0;
  std::size_t unlabeled = 0;

  bool passed() const {
    return actual_total == expected.total && actual_entailment == expected.entailment &&
           actual_contradiction == expected.contradiction;
  }
  long long delta_total() const {
    return static_cast<long long>(actual_total) - static_cast<long long>(expected.total);
  }

  std::string to_text() const {
    std::string out = "split " + expected.name + ": " + (passed() ? "PASS" : "FAIL");
    out += " total " + std::to_string(actual_total) + "/" + std::to_string(expected.total);
    out += " entailment " + std::to_string(actual_entailment) + "/" +
           std::to_string(expected.entailment);
    out += " contradiction " + std::to_string(actual_contradiction) + "/" +
           std::to_string(expected.contradiction);
    if (!passed()) {
      out += " (delta " + std::to_string(delta_total()) + ")";
    }
    if (unlabeled > 0) out += " [" + std::to_string(unlabeled) + " unlabeled]";
    return out;
  }
};

inline SplitReport validate_split(const Corpus& corpus, const SplitExpectation& expected) {
  SplitReport report;
  report.expected = expected;
  report.actual_total = corpus.statements().size();
  for (const auto& [id, stmt] : corpus.statements()) {
    if (!stmt.gold) {
      ++report.unlabeled;
    } else if (*stmt.gold == Label::Entailment) {
      ++report.actual_entailment;
    } else {
      ++report.actual_contradiction;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Canonical serialization (round-trips through load_corpus)
// ---------------------------------------------------------------------------

inline json corpus_to_json_ctrs(const Corpus& corpus) {
  json out = json::array();
  for (const auto& [id, ctr] : corpus.trials()) {
    json sections = json::object();
    for (const auto& [name, lines] : ctr.sections) sections[to_string(name)] = lines;
    out.push_back({{"trial_id", id}, {"sections", std::move(sections)}});
  }
  return out;
}

inline json corpus_to_json_statements(const Corpus& corpus) {
  json out = json::array();
  for (const auto& [id, stmt] : corpus.statements()) {
    json rec = {{"statement_id", id},
                {"text", stmt.text},
                {"type", to_string(stmt.stmt_type)},
                {"section_id", to_string(stmt.section)},
                {"primary_id", stmt.primary_trial}};
    if (stmt.secondary_trial) rec["secondary_id"] = *stmt.secondary_trial;
    if (stmt.gold) rec["label"] = to_string(*stmt.gold);
    out.push_back(std::move(rec));
  }
  return out;
}

inline json corpus_to_json_manifest(const Corpus& corpus) {
  json out = json::array();
  for (const auto& link : corpus.links()) {
    out.push_back({{"perturbed_id", link.perturbed_id},
                   {"base_id", link.base_id},
                   {"kind", to_string(link.kind)}});
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  write_file_atomic(dir / "ctrs.json", corpus_to_json_ctrs(corpus).dump(2) + "\n");
  write_file_atomic(dir / "statements.json", corpus_to_json_statements(corpus).dump(2) + "\n");
  write_file_atomic(dir / "manifest.json", corpus_to_json_manifest(corpus).dump(2) + "\n");
}

// Content digest of the statement id set; two runs are comparable iff equal.
inline std::string dataset_digest(const Corpus& corpus) {
  std::string joined;
  for (const auto& [id, stmt] : corpus.statements()) {
    joined += id;
    joined.push_back('\n');
  }
  return sha256_hex(joined);
}

}  // namespace ctnli
