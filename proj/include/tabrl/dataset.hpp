#pragma once

// Benchmark records (JSONL), table workspaces and the difficulty taxonomy.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrl/detail/strings.hpp"
#include "tabrl/extraction.hpp"

namespace tabrl {

enum class Language { zh, en };
enum class QuestionDifficulty { easy, medium, hard };
enum class TableDifficulty { simple, medium, complex };

inline std::string_view to_string(Language v) { return v == Language::zh ? "zh" : "en"; }
inline std::string_view to_string(QuestionDifficulty v) {
  switch (v) {
    case QuestionDifficulty::easy: return "easy";
    case QuestionDifficulty::medium: return "medium";
    case QuestionDifficulty::hard: return "hard";
  }
  return "easy";
}
inline std::string_view to_string(TableDifficulty v) {
  switch (v) {
    case TableDifficulty::simple: return "simple";
    case TableDifficulty::medium: return "medium";
    case TableDifficulty::complex: return "complex";
  }
  return "simple";
}

struct GoldRecord {
  std::string id;
  Language language = Language::en;
  std::string domain;
  std::string question;
  std::string gold_answer;
  PathSet gold_table_paths;
  /// As written in the record.
  std::string table_dir_field;
  /// table_dir_field resolved against the dataset file's directory.
  std::filesystem::path table_dir;
  QuestionDifficulty question_difficulty = QuestionDifficulty::easy;
  TableDifficulty table_difficulty = TableDifficulty::simple;
  bool multi_table = false;
  bool multi_sheet = false;
  bool complex_header = false;
};

/// Validation failure pinned to a 1-based line of the input.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Multi-table inputs are always complex; otherwise one structural
/// complication (extra sheets or a complex header) is medium and both are complex.
inline TableDifficulty classify_table_difficulty(bool multi_table, bool multi_sheet, bool complex_header) {
  if (multi_table) return TableDifficulty::complex;
  if (multi_sheet && complex_header) return TableDifficulty::complex;
  if (multi_sheet || complex_header) return TableDifficulty::medium;
  return TableDifficulty::simple;
}

namespace detail {

template <typename Enum, std::size_t N>
Enum parse_enum(const std::array<Enum, N>& values, const std::string& text, std::size_t line, std::string_view field) {
  for (auto v : values) {
    if (to_string(v) == text) return v;
  }
  throw DatasetError(line, "invalid value '" + text + "' for field " + std::string(field));
}

inline const nlohmann::json& require(const nlohmann::json& obj, std::size_t line, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end()) throw DatasetError(line, std::string("missing field ") + field);
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, std::size_t line, const char* field) {
  const auto& v = require(obj, line, field);
  if (!v.is_string()) throw DatasetError(line, std::string("field ") + field + " must be a string");
  return v.get<std::string>();
}

inline bool require_bool(const nlohmann::json& obj, std::size_t line, const char* field) {
  const auto& v = require(obj, line, field);
  if (!v.is_boolean()) throw DatasetError(line, std::string("field ") + field + " must be a boolean");
  return v.get<bool>();
}

}  // namespace detail

struct LoadOptions {
  /// Check that every gold table path exists under the record's table_dir.
  bool check_files = true;
  /// Reject records whose table_difficulty disagrees with their structural flags.
  bool check_table_difficulty = true;
};

inline GoldRecord parse_record(const nlohmann::json& j, std::size_t line, const std::filesystem::path& base_dir,
                               const LoadOptions& opts = {}) {
  if (!j.is_object()) throw DatasetError(line, "record must be a JSON object");
  GoldRecord r;
  r.id = detail::require_string(j, line, "id");
  if (r.id.empty()) throw DatasetError(line, "field id must be non-empty");
  r.language = detail::parse_enum(std::array{Language::zh, Language::en}, detail::require_string(j, line, "language"),
                                  line, "language");
  r.domain = detail::require_string(j, line, "domain");
  r.question = detail::require_string(j, line, "question");
  r.gold_answer = detail::require_string(j, line, "gold_answer");
  if (detail::is_blank(r.gold_answer)) throw DatasetError(line, "field gold_answer must be non-empty");
  const auto& paths = detail::require(j, line, "gold_table_paths");
  if (!paths.is_array()) throw DatasetError(line, "field gold_table_paths must be an array");
  for (const auto& p : paths) {
    if (!p.is_string()) throw DatasetError(line, "field gold_table_paths must contain strings");
    auto normal = normalize_table_path(p.get<std::string>());
    if (normal.empty()) throw DatasetError(line, "empty path in gold_table_paths");
    if (normal == ".." || detail::starts_with(normal, "../") || normal.front() == '/') {
      throw DatasetError(line, "gold table path escapes table_dir: " + normal);
    }
    r.gold_table_paths.insert(std::move(normal));
  }
  r.table_dir_field = detail::require_string(j, line, "table_dir");
  std::filesystem::path dir(r.table_dir_field);
  r.table_dir = dir.is_absolute() ? dir : base_dir / dir;
  r.question_difficulty =
      detail::parse_enum(std::array{QuestionDifficulty::easy, QuestionDifficulty::medium, QuestionDifficulty::hard},
                         detail::require_string(j, line, "question_difficulty"), line, "question_difficulty");
  r.table_difficulty =
      detail::parse_enum(std::array{TableDifficulty::simple, TableDifficulty::medium, TableDifficulty::complex},
                         detail::require_string(j, line, "table_difficulty"), line, "table_difficulty");
  r.multi_table = detail::require_bool(j, line, "multi_table");
  r.multi_sheet = detail::require_bool(j, line, "multi_sheet");
  r.complex_header = detail::require_bool(j, line, "complex_header");

  if (opts.check_table_difficulty &&
      classify_table_difficulty(r.multi_table, r.multi_sheet, r.complex_header) != r.table_difficulty) {
    throw DatasetError(line, "table_difficulty '" + std::string(to_string(r.table_difficulty)) +
                                 "' disagrees with multi_table/multi_sheet/complex_header flags");
  }
  if (opts.check_files) {
    for (const auto& p : r.gold_table_paths) {
      std::error_code ec;
      if (!std::filesystem::is_regular_file(r.table_dir / p, ec)) {
        throw DatasetError(line, "table file not found: " + p + " (under " + r.table_dir.string() + ")");
      }
    }
  }
  return r;
}

inline std::vector<GoldRecord> parse_records(std::istream& in, const std::filesystem::path& base_dir,
                                             const LoadOptions& opts = {}) {
  std::vector<GoldRecord> records;
  std::map<std::string, std::size_t> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (detail::is_blank(text)) continue;
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DatasetError(line, "malformed JSON");
    auto r = parse_record(j, line, base_dir, opts);
    if (auto [it, fresh] = seen.emplace(r.id, line); !fresh) {
      throw DatasetError(line, "duplicate id " + r.id + " (first on line " + std::to_string(it->second) + ")");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<GoldRecord> load_records(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return parse_records(in, path.parent_path(), opts);
}

inline nlohmann::json to_json(const GoldRecord& r) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : r.gold_table_paths) paths.push_back(p);
  return nlohmann::json{{"id", r.id},
                        {"language", to_string(r.language)},
                        {"domain", r.domain},
                        {"question", r.question},
                        {"gold_answer", r.gold_answer},
                        {"gold_table_paths", std::move(paths)},
                        {"table_dir", r.table_dir_field},
                        {"question_difficulty", to_string(r.question_difficulty)},
                        {"table_difficulty", to_string(r.table_difficulty)},
                        {"multi_table", r.multi_table},
                        {"multi_sheet", r.multi_sheet},
                        {"complex_header", r.complex_header}};
}

// ---- splits ----------------------------------------------------------------

struct Split {
  std::vector<GoldRecord> train;
  std::vector<GoldRecord> test;
};

namespace detail {

// Unbiased index in [0, bound) by rejection; independent of the standard
// library's distribution implementation so splits are portable.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace detail

/// Seeded shuffle, then the first round(n * train_ratio) records become train.
inline Split split_records(std::vector<GoldRecord> records, double train_ratio, double test_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0) || !(test_ratio > 0) || std::fabs(train_ratio + test_ratio - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be positive and sum to 1");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = records.size(); i > 1; --i) {
    std::swap(records[i - 1], records[detail::bounded(rng, i)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(records.size()) * train_ratio));
  Split s;
  s.train.assign(std::make_move_iterator(records.begin()), std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)));
  s.test.assign(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)), std::make_move_iterator(records.end()));
  return s;
}

/// Halves a training list into (first, second); the first half gets the extra record when odd.
inline std::pair<std::vector<GoldRecord>, std::vector<GoldRecord>> halve(std::vector<GoldRecord> records) {
  auto mid = records.begin() + static_cast<std::ptrdiff_t>((records.size() + 1) / 2);
  std::vector<GoldRecord> second(std::make_move_iterator(mid), std::make_move_iterator(records.end()));
  records.erase(mid, records.end());
  return {std::move(records), std::move(second)};
}

// ---- table registry ----------------------------------------------------------

struct SheetInfo {
  /// Relative to the record's table_dir, "/"-separated.
  std::string path;
  std::size_t rows = 0;
  std::size_t cells = 0;
  bool has_complex_header = false;
};

namespace detail {

// Counts (records, fields) of a delimiter-separated file; quoted fields may
// contain delimiters and newlines.
inline std::pair<std::size_t, std::size_t> count_table(std::istream& in, char delim) {
  std::size_t rows = 0, cells = 0, fields = 0;
  bool in_quotes = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
        } else {
          in_quotes = false;
        }
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == delim) {
      ++fields;
    } else if (c == '\n') {
      ++rows;
      cells += fields + 1;
      fields = 0;
      any = false;
    }
  }
  if (any) {
    ++rows;
    cells += fields + 1;
  }
  return {rows, cells};
}

}  // namespace detail

class TableRegistry {
 public:
  TableRegistry() = default;

  /// Scans every record's table_dir; one sheet per file.
  static TableRegistry build(const std::vector<GoldRecord>& records) {
    TableRegistry reg;
    for (const auto& r : records) {
      std::vector<SheetInfo> sheets;
      std::error_code ec;
      if (!std::filesystem::is_directory(r.table_dir, ec)) {
        throw std::runtime_error("record " + r.id + ": table_dir is not a directory: " + r.table_dir.string());
      }
      for (const auto& entry : std::filesystem::recursive_directory_iterator(r.table_dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        if (!in) throw std::runtime_error("record " + r.id + ": unreadable table " + entry.path().string());
        const char delim = entry.path().extension() == ".tsv" ? '\t' : ',';
        auto [rows, cells] = detail::count_table(in, delim);
        sheets.push_back(SheetInfo{std::filesystem::relative(entry.path(), r.table_dir).generic_string(), rows, cells,
                                   r.complex_header});
      }
      std::sort(sheets.begin(), sheets.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
      reg.tables_.emplace(r.id, std::move(sheets));
    }
    return reg;
  }

  const std::vector<SheetInfo>* sheets(const std::string& record_id) const {
    auto it = tables_.find(record_id);
    return it == tables_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::vector<SheetInfo>>& tables() const { return tables_; }

 private:
  std::map<std::string, std::vector<SheetInfo>> tables_;
};

}  // namespace tabrl
