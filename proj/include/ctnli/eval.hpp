#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctnli/corpus.hpp"
#include "ctnli/infer.hpp"

namespace ctnli {

// ---------------------------------------------------------------------------
// Counts and metrics
// ---------------------------------------------------------------------------

// Positive class is Entailment.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// A score value plus the size of the set it was computed over. An empty
// denominator set yields an absent value with a reason, never a zero.
struct Metric {
  std::optional<double> value;
  std::size_t denominator = 0;
  std::string reason;

  static Metric defined(double v, std::size_t den) { return {v, den, ""}; }
  static Metric absent(std::string why, std::size_t den = 0) {
    return {std::nullopt, den, std::move(why)};
  }

  bool operator==(const Metric&) const = default;
};

struct F1Triple {
  Metric precision;
  Metric recall;
  Metric f1;
  Metric macro_f1;
};

struct Scores {
  ConfusionCounts counts;
  Metric precision;
  Metric recall;
  Metric f1;
  Metric macro_f1;
  Metric consistency;
  Metric faithfulness;
  std::size_t scored = 0;    // (prediction, gold) pairs behind the confusion
  std::size_t unparsed = 0;  // prediction records that failed to parse
};

// ---------------------------------------------------------------------------
// Confusion
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<std::string, Parsed> prediction_map(
    const std::vector<PredictionRecord>& predictions) {
  std::map<std::string, Parsed> out;
  for (const auto& record : predictions) {
    if (!out.emplace(record.statement_id, record.parsed).second) {
      throw DuplicateId(record.statement_id);
    }
  }
  return out;
}

// An Unparsed prediction scores as the label opposite to gold.
inline Parsed effective_prediction(Parsed parsed, Label gold) {
  if (parsed != Parsed::Unparsed) return parsed;
  return gold == Label::Entailment ? Parsed::Contradiction : Parsed::Entailment;
}

}  // namespace detail

inline ConfusionCounts confusion(const std::map<std::string, Parsed>& predictions,
                                 const std::map<std::string, Label>& gold) {
  for (const auto& [id, parsed] : predictions) {
    if (!gold.count(id)) throw UnknownStatement(id);
  }
  ConfusionCounts counts;
  for (const auto& [id, label] : gold) {
    auto it = predictions.find(id);
    if (it == predictions.end()) throw MissingPrediction(id);
    Parsed effective = detail::effective_prediction(it->second, label);
    if (label == Label::Entailment) {
      effective == Parsed::Entailment ? ++counts.tp : ++counts.fn;
    } else {
      effective == Parsed::Contradiction ? ++counts.tn : ++counts.fp;
    }
  }
  return counts;
}

inline ConfusionCounts confusion(const std::vector<PredictionRecord>& predictions,
                                 const std::map<std::string, Label>& gold) {
  return confusion(detail::prediction_map(predictions), gold);
}

// ---------------------------------------------------------------------------
// F1
// ---------------------------------------------------------------------------

inline F1Triple f1_scores(const ConfusionCounts& counts) {
  F1Triple out;
  const std::size_t pred_pos = counts.tp + counts.fp;
  const std::size_t gold_pos = counts.tp + counts.fn;
  out.precision = pred_pos == 0
                      ? Metric::absent("no positive predictions")
                      : Metric::defined(static_cast<double>(counts.tp) / pred_pos, pred_pos);
  out.recall = gold_pos == 0
                   ? Metric::absent("no positive golds")
                   : Metric::defined(static_cast<double>(counts.tp) / gold_pos, gold_pos);
  if (!out.precision.value || !out.recall.value) {
    out.f1 = Metric::absent("no positive predictions or golds", counts.total());
  } else if (*out.precision.value + *out.recall.value == 0.0) {
    out.f1 = Metric::absent("precision and recall both zero", counts.total());
  } else {
    double p = *out.precision.value;
    double r = *out.recall.value;
    out.f1 = Metric::defined(2.0 * p * r / (p + r), counts.total());
  }

  // Secondary macro-F1: mean of the per-class F1 values.
  ConfusionCounts swapped{counts.tn, counts.fn, counts.fp, counts.tp};
  F1Triple contradiction;
  const std::size_t c_pred = swapped.tp + swapped.fp;
  const std::size_t c_gold = swapped.tp + swapped.fn;
  if (c_pred == 0 || c_gold == 0) {
    contradiction.f1 = Metric::absent("degenerate contradiction class");
  } else {
    double p = static_cast<double>(swapped.tp) / c_pred;
    double r = static_cast<double>(swapped.tp) / c_gold;
    contradiction.f1 = (p + r == 0.0)
                           ? Metric::absent("precision and recall both zero")
                           : Metric::defined(2.0 * p * r / (p + r), counts.total());
  }
  if (out.f1.value && contradiction.f1.value) {
    out.macro_f1 =
        Metric::defined((*out.f1.value + *contradiction.f1.value) / 2.0, counts.total());
  } else {
    out.macro_f1 = Metric::absent("per-class F1 undefined", counts.total());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contrast-set metrics
// ---------------------------------------------------------------------------

// Fraction of preserving pairs with matching parsed labels; a pair with an
// Unparsed endpoint counts as inconsistent. Gold labels play no part.
inline Metric consistency(const std::map<std::string, Parsed>& predictions,
                          const std::vector<InterventionLink>& links) {
  std::size_t pairs = 0;
  std::size_t agree = 0;
  for (const auto& link : links) {
    if (link.kind != LinkKind::Preserving) continue;
    auto perturbed = predictions.find(link.perturbed_id);
    auto base = predictions.find(link.base_id);
    if (perturbed == predictions.end()) throw DanglingLink(link.perturbed_id);
    if (base == predictions.end()) throw DanglingLink(link.base_id);
    ++pairs;
    if (perturbed->second != Parsed::Unparsed && base->second != Parsed::Unparsed &&
        perturbed->second == base->second) {
      ++agree;
    }
  }
  if (pairs == 0) return Metric::absent("no preserving links");
  return Metric::defined(static_cast<double>(agree) / pairs, pairs);
}

inline Metric consistency(const std::vector<PredictionRecord>& predictions,
                          const std::vector<InterventionLink>& links) {
  return consistency(detail::prediction_map(predictions), links);
}

struct FaithfulnessOptions {
  // Restrict the denominator to altering pairs whose base statement was
  // predicted correctly.
  bool base_correct_only = true;
};

// Fraction of eligible altering pairs where the perturbed statement is
// predicted as its own gold label; Unparsed counts as incorrect.
inline Metric faithfulness(const std::map<std::string, Parsed>& predictions,
                           const std::map<std::string, Label>& gold,
                           const std::vector<InterventionLink>& links,
                           const FaithfulnessOptions& options = {}) {
  std::size_t eligible = 0;
  std::size_t correct = 0;
  for (const auto& link : links) {
    if (link.kind != LinkKind::Altering) continue;
    auto perturbed = predictions.find(link.perturbed_id);
    auto base = predictions.find(link.base_id);
    if (perturbed == predictions.end()) throw DanglingLink(link.perturbed_id);
    if (base == predictions.end()) throw DanglingLink(link.base_id);
    auto perturbed_gold = gold.find(link.perturbed_id);
    if (perturbed_gold == gold.end()) throw MissingGold(link.perturbed_id);
    if (options.base_correct_only) {
      auto base_gold = gold.find(link.base_id);
      if (base_gold == gold.end()) throw MissingGold(link.base_id);
      if (base->second == Parsed::Unparsed ||
          base->second != to_parsed(base_gold->second)) {
        continue;
      }
    }
    ++eligible;
    if (perturbed->second != Parsed::Unparsed &&
        perturbed->second == to_parsed(perturbed_gold->second)) {
      ++correct;
    }
  }
  if (eligible == 0) return Metric::absent("empty eligibility set");
  return Metric::defined(static_cast<double>(correct) / eligible, eligible);
}

inline Metric faithfulness(const std::vector<PredictionRecord>& predictions,
                           const std::map<std::string, Label>& gold,
                           const std::vector<InterventionLink>& links,
                           const FaithfulnessOptions& options = {}) {
  return faithfulness(detail::prediction_map(predictions), gold, links, options);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvaluationReport {
  Scores overall;
  std::map<std::string, Scores> per_section;
  std::map<std::string, Scores> per_type;
  std::size_t unparsed = 0;
  std::string dataset_digest;
  std::string plan_digest;
  FaithfulnessOptions faithfulness_options;
};

namespace detail {

// `scored` holds only the predictions with gold labels; `all_parsed` and
// `all_gold` stay complete because links may cross group boundaries.
inline Scores score_group(const std::map<std::string, Parsed>& scored,
                          const std::map<std::string, Label>& gold,
                          const std::map<std::string, Parsed>& all_parsed,
                          const std::map<std::string, Label>& all_gold,
                          const std::vector<InterventionLink>& links,
                          const FaithfulnessOptions& options, std::size_t unparsed) {
  Scores scores;
  scores.counts = confusion(scored, gold);
  scores.scored = scores.counts.total();
  F1Triple triple = f1_scores(scores.counts);
  scores.precision = triple.precision;
  scores.recall = triple.recall;
  scores.f1 = triple.f1;
  scores.macro_f1 = triple.macro_f1;
  scores.consistency = consistency(all_parsed, links);
  scores.faithfulness = faithfulness(all_parsed, all_gold, links, options);
  scores.unparsed = unparsed;
  return scores;
}

}  // namespace detail

// Scores the predictions against the corpus gold labels and manifest,
// overall and broken down by section and by statement type. Statements
// without gold labels are excluded from the confusion but still count for
// consistency.
inline EvaluationReport report(const std::vector<PredictionRecord>& predictions,
                               const Corpus& corpus, const FaithfulnessOptions& options = {},
                               const std::string& plan_digest = "") {
  auto parsed = detail::prediction_map(predictions);
  for (const auto& [id, value] : parsed) {
    corpus.statement(id);  // throws UnknownStatement
  }

  std::map<std::string, Label> gold;
  for (const auto& [id, stmt] : corpus.statements()) {
    if (!stmt.gold) continue;
    if (!parsed.count(id)) throw MissingPrediction(id);
    gold[id] = *stmt.gold;
  }
  std::map<std::string, Parsed> scored;
  for (const auto& [id, label] : gold) scored[id] = parsed.at(id);

  auto group_of = [&](const std::string& id, bool by_section) {
    const StatementInstance& stmt = corpus.statement(id);
    return std::string(by_section ? to_string(stmt.section) : to_string(stmt.stmt_type));
  };
  auto count_unparsed = [](const std::map<std::string, Parsed>& preds) {
    std::size_t n = 0;
    for (const auto& [id, value] : preds) {
      if (value == Parsed::Unparsed) ++n;
    }
    return n;
  };

  EvaluationReport out;
  out.faithfulness_options = options;
  out.dataset_digest = dataset_digest(corpus);
  out.plan_digest = plan_digest;
  out.overall = detail::score_group(scored, gold, parsed, gold, corpus.links(), options,
                                    count_unparsed(parsed));
  out.unparsed = out.overall.unparsed;

  for (bool by_section : {true, false}) {
    std::map<std::string, std::map<std::string, Parsed>> group_preds;
    std::map<std::string, std::map<std::string, Parsed>> group_scored;
    std::map<std::string, std::map<std::string, Label>> group_gold;
    std::map<std::string, std::vector<InterventionLink>> group_links;
    for (const auto& [id, value] : parsed) {
      group_preds[group_of(id, by_section)][id] = value;
    }
    for (const auto& [id, label] : gold) {
      const std::string group = group_of(id, by_section);
      group_gold[group][id] = label;
      group_scored[group][id] = parsed.at(id);
    }
    for (const auto& link : corpus.links()) {
      group_links[group_of(link.perturbed_id, by_section)].push_back(link);
    }
    auto& target = by_section ? out.per_section : out.per_type;
    for (const auto& [group, preds] : group_preds) {
      target[group] =
          detail::score_group(group_scored[group], group_gold[group], parsed, gold,
                              group_links[group], options, count_unparsed(preds));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline json metric_to_json(const Metric& m) {
  json doc = {{"denominator", m.denominator}};
  if (m.value) {
    doc["value"] = *m.value;
  } else {
    doc["value"] = nullptr;
    doc["reason"] = m.reason;
  }
  return doc;
}

inline Metric metric_from_json(const json& doc) {
  Metric m;
  m.denominator = doc.value("denominator", std::size_t{0});
  if (doc.contains("value") && !doc.at("value").is_null()) {
    m.value = doc.at("value").get<double>();
  } else {
    m.reason = doc.value("reason", "");
  }
  return m;
}

inline json scores_to_json(const Scores& s) {
  return {{"counts",
           {{"tp", s.counts.tp}, {"fp", s.counts.fp}, {"fn", s.counts.fn}, {"tn", s.counts.tn}}},
          {"precision", metric_to_json(s.precision)},
          {"recall", metric_to_json(s.recall)},
          {"f1", metric_to_json(s.f1)},
          {"macro_f1", metric_to_json(s.macro_f1)},
          {"consistency", metric_to_json(s.consistency)},
          {"faithfulness", metric_to_json(s.faithfulness)},
          {"scored", s.scored},
          {"unparsed", s.unparsed}};
}

inline Scores scores_from_json(const json& doc) {
  Scores s;
  const json& c = doc.at("counts");
  s.counts = {c.value("tp", std::size_t{0}), c.value("fp", std::size_t{0}),
              c.value("fn", std::size_t{0}), c.value("tn", std::size_t{0})};
  s.precision = metric_from_json(doc.at("precision"));
  s.recall = metric_from_json(doc.at("recall"));
  s.f1 = metric_from_json(doc.at("f1"));
  s.macro_f1 = metric_from_json(doc.at("macro_f1"));
  s.consistency = metric_from_json(doc.at("consistency"));
  s.faithfulness = metric_from_json(doc.at("faithfulness"));
  s.scored = doc.value("scored", std::size_t{0});
  s.unparsed = doc.value("unparsed", std::size_t{0});
  return s;
}

inline std::string format_metric(const Metric& m) {
  if (!m.value) return "n/a (" + m.reason + ")";
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.4f (n=%zu)", *m.value, m.denominator);
  return buffer;
}

}  // namespace detail

inline json report_to_json(const EvaluationReport& report) {
  json sections = json::object();
  for (const auto& [name, scores] : report.per_section) {
    sections[name] = detail::scores_to_json(scores);
  }
  json types = json::object();
  for (const auto& [name, scores] : report.per_type) {
    types[name] = detail::scores_to_json(scores);
  }
  return {{"schema", "ctnli-report-v1"},
          {"dataset_digest", report.dataset_digest},
          {"plan_digest", report.plan_digest},
          {"faithfulness_base_correct_only", report.faithfulness_options.base_correct_only},
          {"unparsed", report.unparsed},
          {"overall", detail::scores_to_json(report.overall)},
          {"per_section", std::move(sections)},
          {"per_type", std::move(types)}};
}

inline EvaluationReport report_from_json(const json& doc) {
  EvaluationReport report;
  report.dataset_digest = doc.value("dataset_digest", "");
  report.plan_digest = doc.value("plan_digest", "");
  report.faithfulness_options.base_correct_only =
      doc.value("faithfulness_base_correct_only", true);
  report.unparsed = doc.value("unparsed", std::size_t{0});
  report.overall = detail::scores_from_json(doc.at("overall"));
  if (doc.contains("per_section")) {
    for (auto it = doc.at("per_section").begin(); it != doc.at("per_section").end(); ++it) {
      report.per_section[it.key()] = detail::scores_from_json(it.value());
    }
  }
  if (doc.contains("per_type")) {
    for (auto it = doc.at("per_type").begin(); it != doc.at("per_type").end(); ++it) {
      report.per_type[it.key()] = detail::scores_from_json(it.value());
    }
  }
  return report;
}

// The overall metrics in F1, consistency, faithfulness order.
inline std::string summary_line(const EvaluationReport& report) {
  auto one = [](const char* name, const Metric& m) {
    if (!m.value) return std::string(name) + " n/a";
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%s %.4f", name, *m.value);
    return std::string(buffer);
  };
  return one("F1", report.overall.f1) + "  " + one("consistency", report.overall.consistency) +
         "  " + one("faithfulness", report.overall.faithfulness);
}

inline std::string report_to_text(const EvaluationReport& report) {
  std::string out;
  auto row = [&](const std::string& name, const Scores& s) {
    out += "  " + name + ":\n";
    out += "    precision     " + detail::format_metric(s.precision) + "\n";
    out += "    recall        " + detail::format_metric(s.recall) + "\n";
    out += "    f1            " + detail::format_metric(s.f1) + "\n";
    out += "    macro_f1      " + detail::format_metric(s.macro_f1) + "\n";
    out += "    consistency   " + detail::format_metric(s.consistency) + "\n";
    out += "    faithfulness  " + detail::format_metric(s.faithfulness) + "\n";
    out += "    counts        tp=" + std::to_string(s.counts.tp) +
           " fp=" + std::to_string(s.counts.fp) + " fn=" + std::to_string(s.counts.fn) +
           " tn=" + std::to_string(s.counts.tn) + " unparsed=" + std::to_string(s.unparsed) +
           "\n";
  };
  out += "overall:\n";
  row("all", report.overall);
  if (!report.per_section.empty()) {
    out += "per section:\n";
    for (const auto& [name, scores] : report.per_section) row(name, scores);
  }
  if (!report.per_type.empty()) {
    out += "per type:\n";
    for (const auto& [name, scores] : report.per_type) row(name, scores);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string label;
  Metric f1;
  Metric consistency;
  Metric faithfulness;
  // Deltas vs the baseline row, in percentage points.
  std::optional<double> f1_delta_pp;
  std::optional<double> consistency_delta_pp;
  std::optional<double> faithfulness_delta_pp;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // first row is the baseline
};

inline ComparisonTable compare_runs(const std::vector<EvaluationReport>& reports,
                                    const std::vector<std::string>& labels) {
  if (reports.size() < 2) throw Error("compare needs at least two reports");
  if (labels.size() != reports.size()) throw Error("one label per report required");
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].dataset_digest != reports[0].dataset_digest) {
      throw MismatchedDatasets("run " + labels[i] + " covers a different statement set than " +
                               labels[0]);
    }
  }
  ComparisonTable table;
  const EvaluationReport& base = reports[0];
  auto delta = [](const Metric& run, const Metric& ref) -> std::optional<double> {
    if (!run.value || !ref.value) return std::nullopt;
    return (*run.value - *ref.value) * 100.0;
  };
  for (std::size_t i = 0; i < reports.size(); ++i) {
    ComparisonRow row;
    row.label = labels[i];
    row.f1 = reports[i].overall.f1;
    row.consistency = reports[i].overall.consistency;
    row.faithfulness = reports[i].overall.faithfulness;
    if (i > 0) {
      row.f1_delta_pp = delta(row.f1, base.overall.f1);
      row.consistency_delta_pp = delta(row.consistency, base.overall.consistency);
      row.faithfulness_delta_pp = delta(row.faithfulness, base.overall.faithfulness);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string comparison_to_text(const ComparisonTable& table) {
  auto cell = [](const Metric& m, const std::optional<double>& delta_pp) {
    char buffer[64];
    std::string out;
    if (m.value) {
      std::snprintf(buffer, sizeof(buffer), "%.4f", *m.value);
      out = buffer;
    } else {
      out = "n/a";
    }
    if (delta_pp) {
      std::snprintf(buffer, sizeof(buffer), " (%+.1f)", *delta_pp);
      out += buffer;
    }
    return out;
  };
  std::string out = "run                              F1                consistency       faithfulness\n";
  for (const auto& row : table.rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-32s %-17s %-17s %-17s\n", row.label.c_str(),
                  cell(row.f1, row.f1_delta_pp).c_str(),
                  cell(row.consistency, row.consistency_delta_pp).c_str(),
                  cell(row.faithfulness, row.faithfulness_delta_pp).c_str());
    out += line;
  }
  return out;
}

}  // namespace ctnli
