#pragma once

// Scripted stand-in for policy sampling: draws rollout outcome classes from a
// fixed distribution, scores the groups with the real pipeline against a
// scripted executor, and reports per-epoch filter and reward statistics.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tabrl/dataset.hpp"
#include "tabrl/detail/parallel.hpp"
#include "tabrl/judge.hpp"
#include "tabrl/rewards.hpp"
#include "tabrl/sandbox.hpp"

namespace tabrl::sim {

enum class OutcomeClass { correct_code, wrong_answer_code, broken_code, no_code };

inline std::string_view to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::correct_code: return "correct_code";
    case OutcomeClass::wrong_answer_code: return "wrong_answer_code";
    case OutcomeClass::broken_code: return "broken_code";
    case OutcomeClass::no_code: return "no_code";
  }
  return "no_code";
}

struct ScriptedPolicy {
  /// Indexed by OutcomeClass.
  std::array<double, 4> probabilities{0.5, 0.25, 0.125, 0.125};
  std::uint64_t seed = 1;

  void validate() const {
    double sum = 0;
    for (double p : probabilities) {
      if (!(p >= 0)) throw std::invalid_argument("policy probabilities must be non-negative");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw std::invalid_argument("policy probabilities must sum to 1");
  }

  /// p for correct code; the rest split 2:1:1 over wrong answer, broken code, no code.
  static ScriptedPolicy with_correct_probability(double p, std::uint64_t seed) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("p(correct) must lie in [0, 1]");
    const double rest = 1.0 - p;
    return {{p, rest / 2, rest / 4, rest / 4}, seed};
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t groups = 0;
  std::size_t groups_kept = 0;
  /// Fraction of groups discarded by dynamic sampling.
  double filter_rate = 0.0;
  /// Over every rollout of the epoch.
  double mean_total_reward = 0.0;
  /// Over the rollouts of kept groups; 0 when nothing was kept.
  double mean_advantage_abs = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct SimOptions {
  std::size_t group_size = 4;
  std::size_t epochs = 1;
  std::size_t workers = detail::hardware_workers();
  RewardConfig rewards{};
  double sigma_floor = 1e-6;
};

struct SimResult {
  std::vector<EpochStats> epochs;
  std::size_t groups = 0;
  std::size_t groups_kept = 0;
  /// Kept groups where some incorrect rollout scored at least as high as a correct one.
  std::size_t ordering_violations = 0;
  /// Outcome class tallies over every rollout, indexed by OutcomeClass.
  std::array<std::size_t, 4> class_counts{};
};

/// Table-free records with distinct paths and answers.
inline std::vector<GoldRecord> synthetic_records(std::size_t n) {
  std::vector<GoldRecord> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    GoldRecord r;
    r.id = "sim-" + std::to_string(k);
    r.language = k % 2 == 0 ? Language::en : Language::zh;
    r.domain = "simulation";
    r.question = "What is the total of column value?";
    r.gold_answer = std::to_string(100 + k);
    r.gold_table_paths = {"data/table_" + std::to_string(k) + ".csv"};
    r.table_dir_field = ".";
    r.table_dir = ".";
    out.push_back(std::move(r));
  }
  return out;
}

/// Responses and scripted outcomes for one record, one per outcome class.
struct RecordScript {
  std::array<std::string, 4> responses;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string table_path_of(const GoldRecord& r) {
  return r.gold_table_paths.empty() ? std::string("data.csv") : *r.gold_table_paths.begin();
}

inline std::string code_for(const GoldRecord& r, OutcomeClass c) {
  std::string reducer = c == OutcomeClass::wrong_answer_code ? "mean" : "sum";
  std::string code = "# record " + r.id + "\nimport pandas as pd\ndf = pd.read_csv(\"" + table_path_of(r) +
                     "\")\nresult = df[\"value\"]." + reducer + "(";
  code += c == OutcomeClass::broken_code ? "\n" : ")\n";
  code += "print(result)";
  return code;
}

inline std::string fenced(const std::string& code) {
  return "I will load the table and aggregate the column.\n```python\n" + code + "\n```\n";
}

}  // namespace detail

/// Registers the outcomes of every code class with the executor.
inline std::vector<RecordScript> script_records(const std::vector<GoldRecord>& records, ScriptedExecutor& exec) {
  std::vector<RecordScript> scripts(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    auto& s = scripts[k];
    for (auto c : {OutcomeClass::correct_code, OutcomeClass::wrong_answer_code, OutcomeClass::broken_code}) {
      auto code = detail::code_for(r, c);
      ExecOutcome o;
      switch (c) {
        case OutcomeClass::correct_code:
          o.exit_ok = true;
          o.stdout_text = r.gold_answer + "\n";
          break;
        case OutcomeClass::wrong_answer_code:
          o.exit_ok = true;
          o.stdout_text = "not " + r.gold_answer + "\n";
          break;
        default:
          o.stderr_text = "SyntaxError: '(' was never closed\n";
          break;
      }
      exec.add(code, std::move(o));
      s.responses[static_cast<std::size_t>(c)] = detail::fenced(code);
    }
    s.responses[static_cast<std::size_t>(OutcomeClass::no_code)] =
        "The total is probably " + r.gold_answer + ", no code needed.";
  }
  return scripts;
}

/// Outcome class of one rollout; depends only on (seed, epoch, record, rollout).
inline OutcomeClass draw_class(const ScriptedPolicy& policy, std::size_t epoch, std::size_t record,
                               std::size_t rollout) {
  std::uint64_t h = detail::splitmix64(policy.seed);
  h = detail::splitmix64(h ^ epoch);
  h = detail::splitmix64(h ^ record);
  h = detail::splitmix64(h ^ rollout);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  double acc = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    acc += policy.probabilities[c];
    if (u < acc && policy.probabilities[c] > 0) return static_cast<OutcomeClass>(c);
  }
  for (std::size_t c = 4; c-- > 0;) {
    if (policy.probabilities[c] > 0) return static_cast<OutcomeClass>(c);
  }
  return OutcomeClass::no_code;
}

inline SimResult run_sim(const ScriptedPolicy& policy, const std::vector<GoldRecord>& records,
                         const SimOptions& opts) {
  policy.validate();
  if (opts.group_size < 2) throw std::invalid_argument("group size must be >= 2");
  if (opts.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (records.empty()) throw std::invalid_argument("simulation needs at least one record");

  ScriptedExecutor exec;
  const auto scripts = script_records(records, exec);
  const Judge judge(JudgeConfig{});
  CodeBleuSimilarity sim;
  const CodeSimilarity similarity = [&sim](const CodeCandidate& c, const CodeCandidate& r) { return sim(c, r); };

  SimResult result;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<RolloutGroup> groups(records.size());
    std::vector<std::array<std::size_t, 4>> tallies(records.size());
    tabrl::detail::parallel_for(records.size(), opts.workers, [&](std::size_t k) {
      std::vector<RolloutInput> inputs(opts.group_size);
      for (std::size_t i = 0; i < opts.group_size; ++i) {
        auto c = draw_class(policy, epoch, k, i);
        ++tallies[k][static_cast<std::size_t>(c)];
        inputs[i].id = "e" + std::to_string(epoch) + "-r" + std::to_string(k) + "-" + std::to_string(i);
        inputs[i].response = scripts[k].responses[static_cast<std::size_t>(c)];
      }
      ScoringContext ctx{exec, judge, similarity, {}, {}, opts.rewards, opts.sigma_floor, 1};
      groups[k] = score_group(inputs, records[k], ctx);
    });

    EpochStats st;
    st.epoch = epoch;
    st.groups = groups.size();
    double reward_sum = 0, adv_sum = 0;
    std::size_t rollouts = 0, kept_rollouts = 0;
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto& g = groups[k];
      for (std::size_t c = 0; c < 4; ++c) result.class_counts[c] += tallies[k][c];
      for (double r : g.rewards) reward_sum += r;
      rollouts += g.rewards.size();
      if (!g.keep) continue;
      ++st.groups_kept;
      for (double a : g.advantages) adv_sum += std::fabs(a);
      kept_rollouts += g.advantages.size();
      double min_correct = std::numeric_limits<double>::infinity();
      double max_wrong = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < g.rewards.size(); ++i) {
        if (g.correct_flags[i]) {
          min_correct = std::min(min_correct, g.rewards[i]);
        } else {
          max_wrong = std::max(max_wrong, g.rewards[i]);
        }
      }
      if (!(min_correct > max_wrong)) ++result.ordering_violations;
    }
    st.filter_rate = 1.0 - static_cast<double>(st.groups_kept) / static_cast<double>(st.groups);
    st.mean_total_reward = reward_sum / static_cast<double>(rollouts);
    st.mean_advantage_abs = kept_rollouts == 0 ? 0.0 : adv_sum / static_cast<double>(kept_rollouts);
    result.groups += st.groups;
    result.groups_kept += st.groups_kept;
    result.epochs.push_back(st);
  }
  return result;
}

/// P(0 < K < G) for K ~ Binomial(G, p).
inline double binomial_keep_probability(std::size_t group_size, double p) {
  const double g = static_cast<double>(group_size);
  return 1.0 - std::pow(p, g) - std::pow(1.0 - p, g);
}

inline void write_stats_csv(std::ostream& out, const std::vector<EpochStats>& stats) {
  out << "epoch,groups_kept,filter_rate,mean_total_reward,mean_advantage_abs\n";
  char buf[160];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f\n", s.epoch, s.groups_kept, s.filter_rate,
                  s.mean_total_reward, s.mean_advantage_abs);
    out << buf;
  }
}

}  // namespace tabrl::sim
