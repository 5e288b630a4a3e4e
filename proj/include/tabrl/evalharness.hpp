#pragma once

// Accuracy evaluation of prediction runs, stratified by language, question
// difficulty and table difficulty.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tabrl/dataset.hpp"
#include "tabrl/detail/parallel.hpp"
#include "tabrl/rewards.hpp"

namespace tabrl {

struct PredictionEntry {
  std::string record_id;
  std::string response;
};

struct PredictionRun {
  std::string model_name;
  std::string timestamp;
  std::vector<PredictionEntry> entries;
};

/// JSONL with {"record_id": str, "response": str} per line. Duplicate ids are rejected.
inline PredictionRun parse_predictions(std::istream& in, std::string model_name) {
  PredictionRun run;
  run.model_name = std::move(model_name);
  std::map<std::string, std::size_t> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (detail::is_blank(text)) continue;
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DatasetError(line, "malformed prediction line");
    PredictionEntry e;
    e.record_id = detail::require_string(j, line, "record_id");
    e.response = detail::require_string(j, line, "response");
    if (auto [it, fresh] = seen.emplace(e.record_id, line); !fresh) {
      throw DatasetError(line, "duplicate record_id " + e.record_id + " (first on line " +
                                   std::to_string(it->second) + ")");
    }
    run.entries.push_back(std::move(e));
  }
  return run;
}

inline PredictionRun load_predictions(const std::filesystem::path& path, std::string model_name = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions " + path.string());
  if (model_name.empty()) model_name = path.stem().string();
  return parse_predictions(in, std::move(model_name));
}

struct Cell {
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct EntryVerdict {
  std::string record_id;
  bool correct = false;
  /// exact / numeric / llm when judged, otherwise format_error, exec_error or missing_record.
  std::string stage;
  std::string answer;
  double elapsed_s = 0.0;
  std::string error;
};

struct ScoreReport {
  std::string model_name;
  std::string timestamp;
  Cell overall;
  std::map<std::string, Cell> by_language;
  std::map<std::string, Cell> by_question_difficulty;
  std::map<std::string, Cell> by_table_difficulty;
  std::vector<EntryVerdict> verdicts;
  /// Entries whose record_id is not in the dataset; not counted in any cell.
  std::size_t missing_records = 0;
};

struct EvalOptions {
  ExtractionConfig extraction{};
  ExecLimits limits{};
  std::size_t workers = detail::hardware_workers();
};

namespace detail {

inline ScoreReport empty_report() {
  ScoreReport r;
  for (auto v : {Language::zh, Language::en}) r.by_language[std::string(to_string(v))];
  for (auto v : {QuestionDifficulty::easy, QuestionDifficulty::medium, QuestionDifficulty::hard}) {
    r.by_question_difficulty[std::string(to_string(v))];
  }
  for (auto v : {TableDifficulty::simple, TableDifficulty::medium, TableDifficulty::complex}) {
    r.by_table_difficulty[std::string(to_string(v))];
  }
  return r;
}

}  // namespace detail

inline ScoreReport score_run(const PredictionRun& run, const std::vector<GoldRecord>& records, Executor& executor,
                             const Judge& judge, const EvalOptions& opts = {}) {
  if (run.entries.empty()) throw std::invalid_argument("no entries");
  std::map<std::string_view, const GoldRecord*> index;
  for (const auto& r : records) index.emplace(r.id, &r);

  ScoringContext ctx{executor, judge, [](const CodeCandidate&, const CodeCandidate&) { return 0.0; },
                     opts.extraction, opts.limits};
  ctx.workers = opts.workers;

  ScoreReport report = detail::empty_report();
  report.model_name = run.model_name;
  report.timestamp = run.timestamp;
  report.verdicts.resize(run.entries.size());

  detail::parallel_for(run.entries.size(), opts.workers, [&](std::size_t i) {
    const auto& entry = run.entries[i];
    auto& v = report.verdicts[i];
    v.record_id = entry.record_id;
    auto it = index.find(entry.record_id);
    if (it == index.end()) {
      v.stage = "missing_record";
      v.error = "unknown record";
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    Rollout r;
    r.id = entry.record_id;
    r.response = entry.response;
    evaluate_rollout(r, *it->second, ctx);
    v.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!r.code) {
      v.stage = "format_error";
    } else if (!r.answer) {
      v.stage = "exec_error";
      if (r.exec && r.exec->runner_protocol_error) v.error = r.exec->stderr_text;
    } else {
      v.answer = r.answer->text;
      v.correct = r.verdict->correct;
      v.stage = std::string(to_string(r.verdict->stage));
      v.error = r.judge_error;
    }
  });

  for (const auto& v : report.verdicts) {
    auto it = index.find(v.record_id);
    if (it == index.end()) {
      ++report.missing_records;
      spdlog::warn("prediction for unknown record {}", v.record_id);
      continue;
    }
    const auto& gold = *it->second;
    for (Cell* c : {&report.overall, &report.by_language[std::string(to_string(gold.language))],
                    &report.by_question_difficulty[std::string(to_string(gold.question_difficulty))],
                    &report.by_table_difficulty[std::string(to_string(gold.table_difficulty))]}) {
      ++c->total;
      c->correct += v.correct ? 1 : 0;
    }
  }
  return report;
}

enum class ReportFormat { json, markdown };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw std::invalid_argument("unknown report format: " + std::string(s));
}

namespace detail {

inline nlohmann::json cell_json(const Cell& c) {
  return {{"accuracy", c.accuracy()}, {"correct", c.correct}, {"total", c.total}};
}

inline nlohmann::json cells_json(const std::map<std::string, Cell>& cells) {
  auto out = nlohmann::json::object();
  for (const auto& [k, c] : cells) out[k] = cell_json(c);
  return out;
}

inline Cell cell_from_json(const nlohmann::json& j) {
  return Cell{j.at("correct").get<std::size_t>(), j.at("total").get<std::size_t>()};
}

inline std::string percent(const Cell& c) {
  if (c.total == 0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * c.accuracy());
  return buf;
}

}  // namespace detail

/// Elapsed times are left out so that re-running a deterministic evaluation
/// reproduces the report bytes.
inline nlohmann::json to_json(const ScoreReport& r) {
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : r.verdicts) {
    nlohmann::json e{{"record_id", v.record_id}, {"correct", v.correct}, {"stage", v.stage}, {"answer", v.answer}};
    if (!v.error.empty()) e["error"] = v.error;
    verdicts.push_back(std::move(e));
  }
  return {{"model", r.model_name},
          {"timestamp", r.timestamp},
          {"overall", detail::cell_json(r.overall)},
          {"by_language", detail::cells_json(r.by_language)},
          {"by_question_difficulty", detail::cells_json(r.by_question_difficulty)},
          {"by_table_difficulty", detail::cells_json(r.by_table_difficulty)},
          {"missing_records", r.missing_records},
          {"verdicts", std::move(verdicts)}};
}

inline ScoreReport report_from_json(const nlohmann::json& j) {
  ScoreReport r;
  r.model_name = j.at("model").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.overall = detail::cell_from_json(j.at("overall"));
  for (auto [field, cells] : {std::pair{"by_language", &r.by_language},
                              std::pair{"by_question_difficulty", &r.by_question_difficulty},
                              std::pair{"by_table_difficulty", &r.by_table_difficulty}}) {
    for (const auto& [k, c] : j.at(field).items()) (*cells)[k] = detail::cell_from_json(c);
  }
  r.missing_records = j.at("missing_records").get<std::size_t>();
  for (const auto& e : j.at("verdicts")) {
    EntryVerdict v;
    v.record_id = e.at("record_id").get<std::string>();
    v.correct = e.at("correct").get<bool>();
    v.stage = e.at("stage").get<std::string>();
    v.answer = e.at("answer").get<std::string>();
    v.error = e.value("error", "");
    r.verdicts.push_back(std::move(v));
  }
  return r;
}

/// One row per report. Accuracies are percentages with two decimals.
inline std::string emit_report(std::span<const ScoreReport> reports, ReportFormat format) {
  if (format == ReportFormat::json) {
    if (reports.size() == 1) return to_json(reports.front()).dump(2) + "\n";
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) all.push_back(to_json(r));
    return all.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "| Model | Overall | Language: zh | Language: en | Question: easy | Question: medium | Question: hard "
         "| Table: simple | Table: medium | Table: complex |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    auto cell = [](const std::map<std::string, Cell>& m, const char* k) {
      auto it = m.find(k);
      return it == m.end() ? std::string("-") : detail::percent(it->second);
    };
    out << "| " << r.model_name << " | " << detail::percent(r.overall) << " | " << cell(r.by_language, "zh") << " | "
        << cell(r.by_language, "en") << " | " << cell(r.by_question_difficulty, "easy") << " | "
        << cell(r.by_question_difficulty, "medium") << " | " << cell(r.by_question_difficulty, "hard") << " | "
        << cell(r.by_table_difficulty, "simple") << " | " << cell(r.by_table_difficulty, "medium") << " | "
        << cell(r.by_table_difficulty, "complex") << " |\n";
  }
  return out.str();
}

inline std::string emit_report(const ScoreReport& report, ReportFormat format) {
  return emit_report(std::span<const ScoreReport>(&report, 1), format);
}

/// {"record_id","correct","stage","answer","elapsed_s"} per line.
inline void write_verdict_log(std::ostream& out, const ScoreReport& report) {
  for (const auto& v : report.verdicts) {
    out << nlohmann::json{{"record_id", v.record_id},
                          {"correct", v.correct},
                          {"stage", v.stage},
                          {"answer", v.answer},
                          {"elapsed_s", v.elapsed_s}}
               .dump()
        << '\n';
  }
}

}  // namespace tabrl
