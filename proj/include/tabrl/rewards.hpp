#pragma once

// Per-rollout rewards for one rollout group: piecewise stage reward, table-path
// F1, inner-group code similarity, and their weighted total.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

#include "tabrl/codesim/codebleu.hpp"
#include "tabrl/dataset.hpp"
#include "tabrl/detail/parallel.hpp"
#include "tabrl/extraction.hpp"
#include "tabrl/judge.hpp"
#include "tabrl/rlmath.hpp"
#include "tabrl/sandbox.hpp"

namespace tabrl {

struct RewardConfig {
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  /// format error, execution failure, wrong answer, correct.
  std::array<double, 4> piecewise_levels{0.0, 0.5, 1.0, 3.0};

  void validate() const {
    for (std::size_t i = 1; i < piecewise_levels.size(); ++i) {
      if (!(piecewise_levels[i] > piecewise_levels[i - 1])) {
        throw std::invalid_argument("piecewise_levels must be strictly increasing");
      }
    }
  }
  double top_level() const { return piecewise_levels.back(); }
};

enum class RewardStage { format_error, exec_error, wrong_answer, correct };

inline std::string_view to_string(RewardStage s) {
  switch (s) {
    case RewardStage::format_error: return "format_error";
    case RewardStage::exec_error: return "exec_error";
    case RewardStage::wrong_answer: return "wrong_answer";
    case RewardStage::correct: return "correct";
  }
  return "format_error";
}

/// How r_sim was obtained.
enum class SimilaritySource {
  correct,       // the rollout itself is correct
  group_mean,    // mean similarity against the group's correct codes
  no_code,       // format error: nothing to compare
  no_reference,  // the group has no correct code
};

inline std::string_view to_string(SimilaritySource s) {
  switch (s) {
    case SimilaritySource::correct: return "correct";
    case SimilaritySource::group_mean: return "group_mean";
    case SimilaritySource::no_code: return "no_code";
    case SimilaritySource::no_reference: return "no_reference";
  }
  return "no_code";
}

struct RewardBreakdown {
  double r_piece = 0.0;
  double r_table = 0.0;
  double r_sim = 0.0;
  double r_total = 0.0;
  RewardStage stage = RewardStage::format_error;
  SimilaritySource sim_source = SimilaritySource::no_code;
};

inline double piecewise_reward(bool has_code, bool exec_ok, std::optional<bool> verdict, const RewardConfig& cfg = {}) {
  if (exec_ok != verdict.has_value()) throw std::invalid_argument("piecewise_reward: verdict must be present iff exec_ok");
  if (exec_ok && !has_code) throw std::invalid_argument("piecewise_reward: execution without code");
  const auto& lv = cfg.piecewise_levels;
  if (!has_code) return lv[0];
  if (!exec_ok) return lv[1];
  return *verdict ? lv[3] : lv[2];
}

/// F1 of two normalized path sets; both empty is 1, exactly one empty is 0.
inline double table_path_f1(const PathSet& predicted, const PathSet& gold) {
  if (predicted.empty() && gold.empty()) return 1.0;
  if (predicted.empty() || gold.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& p : predicted) common += gold.contains(p) ? 1 : 0;
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(predicted.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double total_reward(double r_piece, double r_table, double r_sim, const RewardConfig& cfg = {}) {
  return r_piece + cfg.lambda1 * r_table + cfg.lambda2 * r_sim;
}

// ---- groups ------------------------------------------------------------------

struct Rollout {
  std::string id;
  std::string response;
  std::size_t token_count = 1;
  std::optional<CodeCandidate> code;
  PathSet table_paths;
  std::optional<ExecOutcome> exec;
  std::optional<ParsedAnswer> answer;
  std::optional<Verdict> verdict;
  /// Set when the judge failed; the rollout then counts as a wrong answer.
  std::string judge_error;
  std::optional<RewardBreakdown> breakdown;
};

struct RolloutGroup {
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<bool> correct_flags;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> advantages;
  bool keep = false;
  /// No correct code existed for the similarity pass.
  bool similarity_undefined = false;
};

/// Similarity between an incorrect rollout's code and one correct reference code.
using CodeSimilarity = std::function<double(const CodeCandidate& candidate, const CodeCandidate& reference)>;

/// CodeBLEU with per-source analysis caching; safe to share across threads.
class CodeBleuSimilarity {
 public:
  explicit CodeBleuSimilarity(codesim::CodeSimConfig cfg = {}) : cfg_(std::move(cfg)) {}

  double operator()(const CodeCandidate& candidate, const CodeCandidate& reference) const {
    auto c = analysis(candidate.source);
    auto r = analysis(reference.source);
    const codesim::CodeAnalysis* refs[] = {r.get()};
    return codesim::codebleu(*c, refs, cfg_);
  }

  const codesim::CodeSimConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const codesim::CodeAnalysis> analysis(const std::string& source) const {
    std::lock_guard lock(mu_);
    auto& slot = cache_[source];
    if (!slot) slot = std::make_shared<const codesim::CodeAnalysis>(codesim::analyze(source));
    return slot;
  }

  codesim::CodeSimConfig cfg_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const codesim::CodeAnalysis>> cache_;
};

/// r_sim of one rollout. Requires the group's correct_flags.
inline double similarity_reward(std::size_t index, const RolloutGroup& group, const CodeSimilarity& sim,
                                SimilaritySource* source = nullptr) {
  auto set_source = [&](SimilaritySource s) {
    if (source) *source = s;
  };
  if (group.correct_flags.size() != group.rollouts.size()) {
    throw std::logic_error("similarity_reward: correctness flags not computed");
  }
  if (group.correct_flags.at(index)) {
    set_source(SimilaritySource::correct);
    return 1.0;
  }
  const auto& self = group.rollouts[index];
  if (!self.code) {
    set_source(SimilaritySource::no_code);
    return 0.0;
  }
  double sum = 0.0;
  std::size_t n_correct = 0;
  for (std::size_t k = 0; k < group.rollouts.size(); ++k) {
    if (!group.correct_flags[k] || !group.rollouts[k].code) continue;
    sum += sim(*self.code, *group.rollouts[k].code);
    ++n_correct;
  }
  if (n_correct == 0) {
    set_source(SimilaritySource::no_reference);
    return 0.0;
  }
  set_source(SimilaritySource::group_mean);
  return sum / static_cast<double>(n_correct);
}

struct RolloutInput {
  std::string id;
  std::string response;
  std::size_t token_count = 1;
};

/// Everything score_group needs besides the rollouts and the gold record.
struct ScoringContext {
  Executor& executor;
  const Judge& judge;
  CodeSimilarity similarity;
  ExtractionConfig extraction{};
  ExecLimits limits{};
  RewardConfig rewards{};
  double sigma_floor = 1e-6;
  std::size_t workers = detail::hardware_workers();
};

/// Extraction, execution and judging for one rollout (no rewards).
inline void evaluate_rollout(Rollout& r, const GoldRecord& gold, const ScoringContext& ctx) {
  r.code = extract_code(r.response);
  if (!r.code) return;
  r.table_paths = extract_table_paths(*r.code, ctx.extraction);
  try {
    r.exec = ctx.executor.execute(*r.code, gold.table_dir, ctx.limits);
  } catch (const std::exception& e) {
    ExecOutcome failed;
    failed.runner_protocol_error = true;
    failed.stderr_text = e.what();
    r.exec = std::move(failed);
  }
  r.answer = parse_answer(*r.exec);
  if (!r.answer) return;
  auto result = ctx.judge.judge(*r.answer, gold.gold_answer, gold.question);
  if (auto* v = std::get_if<Verdict>(&result)) {
    r.verdict = *v;
  } else {
    r.judge_error = std::get<JudgeError>(result).message;
    spdlog::warn("rollout {}: judge failed, scoring as incorrect: {}", r.id, r.judge_error);
    r.verdict = Verdict{false, JudgeStage::llm, {}};
  }
}

inline RolloutGroup score_group(const std::vector<RolloutInput>& inputs, const GoldRecord& gold,
                                const ScoringContext& ctx) {
  if (inputs.empty()) throw std::invalid_argument("score_group: empty group");
  if (detail::is_blank(gold.gold_answer)) throw std::invalid_argument("score_group: empty gold answer");
  if (!ctx.similarity) throw std::invalid_argument("score_group: no similarity function");

  RolloutGroup group;
  group.rollouts.resize(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    group.rollouts[i].id = inputs[i].id;
    group.rollouts[i].response = inputs[i].response;
    group.rollouts[i].token_count = inputs[i].token_count;
  }

  detail::parallel_for(inputs.size(), ctx.workers,
                       [&](std::size_t i) { evaluate_rollout(group.rollouts[i], gold, ctx); });

  const auto& cfg = ctx.rewards;
  group.correct_flags.resize(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& r = group.rollouts[i];
    RewardBreakdown b;
    const bool exec_ok = r.answer.has_value();
    b.r_piece = piecewise_reward(r.code.has_value(), exec_ok,
                                 exec_ok ? std::optional<bool>(r.verdict->correct) : std::nullopt, cfg);
    b.stage = !r.code ? RewardStage::format_error
              : !exec_ok ? RewardStage::exec_error
              : r.verdict->correct ? RewardStage::correct
                                   : RewardStage::wrong_answer;
    b.r_table = table_path_f1(r.table_paths, gold.gold_table_paths);
    group.correct_flags[i] = b.r_piece == cfg.top_level();
    r.breakdown = b;
  }

  // Similarity needs every correctness flag, hence the barrier above.
  std::vector<double> sims(inputs.size());
  std::vector<SimilaritySource> sources(inputs.size());
  detail::parallel_for(inputs.size(), ctx.workers, [&](std::size_t i) {
    sims[i] = similarity_reward(i, group, ctx.similarity, &sources[i]);
  });

  group.rewards.resize(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& b = *group.rollouts[i].breakdown;
    b.r_sim = sims[i];
    b.sim_source = sources[i];
    if (sources[i] == SimilaritySource::no_reference) group.similarity_undefined = true;
    b.r_total = total_reward(b.r_piece, b.r_table, b.r_sim, cfg);
    group.rewards[i] = b.r_total;
  }

  auto adv = group_advantages(group.rewards, ctx.sigma_floor);
  group.mu = adv.mu;
  group.sigma = adv.sigma;
  group.advantages = std::move(adv.advantages);
  group.keep = dynamic_sampling_keep(group.correct_flags);
  return group;
}

}  // namespace tabrl
