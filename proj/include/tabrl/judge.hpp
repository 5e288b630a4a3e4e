#pragma once

// Binary answer judging: normalized equality, numeric tolerance, then an
// optional external LLM judge.

#include <charconv>
#include <cmath>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include "tabrl/detail/strings.hpp"
#include "tabrl/sandbox.hpp"

namespace tabrl {

struct JudgeConfig {
  double relative_tolerance = 0.005;
  bool use_llm_judge = false;
  std::string llm_endpoint;
  bool cache_enabled = true;

  void validate() const {
    if (!(relative_tolerance >= 0)) throw std::invalid_argument("relative_tolerance must be >= 0");
    if (use_llm_judge && llm_endpoint.empty()) throw std::invalid_argument("use_llm_judge requires llm_endpoint");
  }
};

enum class JudgeStage { exact, numeric, llm };

inline std::string_view to_string(JudgeStage s) {
  switch (s) {
    case JudgeStage::exact: return "exact";
    case JudgeStage::numeric: return "numeric";
    case JudgeStage::llm: return "llm";
  }
  return "exact";
}

struct Verdict {
  bool correct = false;
  JudgeStage stage = JudgeStage::exact;
  std::string rationale;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// Infrastructure failure of the external judge; distinct from "incorrect".
struct JudgeError {
  std::string message;
};

using JudgeResult = std::variant<Verdict, JudgeError>;

struct JudgeQuery {
  std::string question;
  std::string gold;
  std::string candidate;

  friend auto operator<=>(const JudgeQuery&, const JudgeQuery&) = default;
};

/// Binary verdict from an external judge, or the reason none was obtained.
struct LlmReply {
  std::optional<bool> correct;
  std::string rationale;
  std::string error;
};

class LlmJudgeBackend {
 public:
  virtual ~LlmJudgeBackend() = default;
  virtual LlmReply ask(const JudgeQuery& query) = 0;
};

namespace detail {

inline bool is_grouped_number(std::string_view s) {
  static const std::regex grouped(R"(^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$)");
  return std::regex_match(s.begin(), s.end(), grouped);
}

inline bool is_plain_number(std::string_view s) {
  static const std::regex plain(R"(^[+-]?(\d+(\.\d*)?|\.\d+)$)");
  return std::regex_match(s.begin(), s.end(), plain);
}

}  // namespace detail

/// Trim, case-fold, collapse whitespace, drop one trailing period; on pure
/// numerics also drop thousands separators and trailing fractional zeros.
inline std::string normalize(std::string_view answer) {
  std::string collapsed;
  bool pending_space = false;
  for (char c : detail::trim(answer)) {
    if (detail::is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) collapsed += ' ';
    pending_space = false;
    collapsed += c;
  }
  std::string s = detail::ascii_lower(collapsed);
  if (!s.empty() && s.back() == '.') s.pop_back();

  if (detail::is_grouped_number(s)) std::erase(s, ',');
  if (detail::is_plain_number(s)) {
    if (auto dot = s.find('.'); dot != std::string::npos) {
      while (s.back() == '0') s.pop_back();
      if (s.back() == '.') s.pop_back();
      if (s.empty() || s == "+" || s == "-") s += '0';
    }
  }
  return s;
}

/// Parses a normalized answer as a single finite number.
inline std::optional<double> parse_single_number(std::string_view normalized) {
  if (!detail::is_plain_number(normalized)) return std::nullopt;
  if (!normalized.empty() && normalized.front() == '+') normalized.remove_prefix(1);
  double value = 0;
  auto [ptr, ec] = std::from_chars(normalized.data(), normalized.data() + normalized.size(), value);
  if (ec != std::errc{} || ptr != normalized.data() + normalized.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

/// Symmetric closeness: relative to the larger magnitude, absolute when either side is zero.
inline bool numerically_close(double a, double b, double tolerance) {
  if (a == b) return true;
  const double diff = std::fabs(a - b);
  if (a == 0.0 || b == 0.0) return diff <= tolerance;
  return diff / std::max(std::fabs(a), std::fabs(b)) <= tolerance;
}

class Judge {
 public:
  explicit Judge(JudgeConfig cfg, LlmJudgeBackend* llm = nullptr) : cfg_(std::move(cfg)), llm_(llm) {
    if (!(cfg_.relative_tolerance >= 0)) throw std::invalid_argument("relative_tolerance must be >= 0");
  }

  const JudgeConfig& config() const { return cfg_; }

  JudgeResult judge(std::string_view candidate, std::string_view gold, std::string_view question = {}) const {
    if (detail::is_blank(gold)) throw std::invalid_argument("gold answer is empty");
    const auto a = normalize(candidate);
    const auto g = normalize(gold);
    if (a == g) return Verdict{true, JudgeStage::exact, {}};

    JudgeStage last = JudgeStage::exact;
    auto na = parse_single_number(a);
    auto ng = parse_single_number(g);
    if (na && ng) {
      last = JudgeStage::numeric;
      if (numerically_close(*na, *ng, cfg_.relative_tolerance)) return Verdict{true, JudgeStage::numeric, {}};
    }

    if (cfg_.use_llm_judge && llm_ != nullptr) {
      auto reply = llm_->ask(JudgeQuery{std::string(question), std::string(gold), std::string(candidate)});
      if (!reply.correct) return JudgeError{reply.error.empty() ? "llm judge gave no verdict" : reply.error};
      return Verdict{*reply.correct, JudgeStage::llm, reply.rationale};
    }
    return Verdict{false, last, {}};
  }

  JudgeResult judge(const ParsedAnswer& candidate, std::string_view gold, std::string_view question = {}) const {
    return judge(std::string_view(candidate.text), gold, question);
  }

 private:
  JudgeConfig cfg_;
  LlmJudgeBackend* llm_;
};

}  // namespace tabrl
