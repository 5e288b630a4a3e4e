#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "tabrl/rewards.hpp"

namespace tabrl {
namespace {

TEST(Piecewise, Levels) {
  EXPECT_EQ(piecewise_reward(false, false, std::nullopt), 0.0);
  EXPECT_EQ(piecewise_reward(true, false, std::nullopt), 0.5);
  EXPECT_EQ(piecewise_reward(true, true, false), 1.0);
  EXPECT_EQ(piecewise_reward(true, true, true), 3.0);
  RewardConfig custom;
  custom.piecewise_levels = {-1, 0, 2, 5};
  EXPECT_EQ(piecewise_reward(true, true, true, custom), 5.0);
  EXPECT_EQ(piecewise_reward(false, false, std::nullopt, custom), -1.0);
}

TEST(Piecewise, InconsistentInputsThrow) {
  EXPECT_THROW(piecewise_reward(true, true, std::nullopt), std::invalid_argument);
  EXPECT_THROW(piecewise_reward(true, false, true), std::invalid_argument);
  EXPECT_THROW(piecewise_reward(false, true, true), std::invalid_argument);
  RewardConfig bad;
  bad.piecewise_levels = {0, 1, 1, 3};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(TablePathF1, Examples) {
  EXPECT_EQ(table_path_f1({}, {}), 1.0);
  EXPECT_EQ(table_path_f1({"a.csv"}, {}), 0.0);
  EXPECT_EQ(table_path_f1({}, {"a.csv"}), 0.0);
  EXPECT_EQ(table_path_f1({"a.csv"}, {"a.csv"}), 1.0);
  EXPECT_EQ(table_path_f1({"a.csv"}, {"b.csv"}), 0.0);
  EXPECT_DOUBLE_EQ(table_path_f1({"a.csv"}, {"a.csv", "b.csv"}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(table_path_f1({"a.csv", "c.csv"}, {"a.csv", "b.csv"}), 0.5);
}

TEST(TablePathF1, AllSubsetPairsOfFourPaths) {
  const std::vector<std::string> universe{"a.csv", "data/b.csv", "c.xlsx", "d/e.csv"};
  int pairs = 0;
  for (unsigned p = 0; p < 16; ++p) {
    for (unsigned g = 0; g < 16; ++g) {
      PathSet pred, gold;
      for (unsigned i = 0; i < 4; ++i) {
        if (p >> i & 1) pred.insert(universe[i]);
        if (g >> i & 1) gold.insert(universe[i]);
      }
      const double got = table_path_f1(pred, gold);
      EXPECT_EQ(got, oracle::f1(pred, gold)) << p << "/" << g;
      EXPECT_EQ(got, table_path_f1(gold, pred));
      EXPECT_GE(got, 0.0);
      EXPECT_LE(got, 1.0);
      ++pairs;
    }
  }
  EXPECT_EQ(pairs, 256);
}

TEST(TotalReward, Examples) {
  EXPECT_NEAR(total_reward(3.0, 2.0 / 3.0, 1.0), 4.0 + 1.0 / 3.0, 1e-12);
  EXPECT_EQ(total_reward(0, 0, 0), 0.0);
  EXPECT_NEAR(total_reward(1.0, 0.5, 0.62), 1.87, 1e-12);
  RewardConfig cfg;
  cfg.lambda1 = 0.25;
  cfg.lambda2 = 2.0;
  EXPECT_NEAR(total_reward(3.0, 1.0, 0.5, cfg), 4.25, 1e-12);
}

CodeCandidate code(std::string s) { return CodeCandidate{std::move(s)}; }

RolloutGroup flagged_group(std::vector<std::optional<std::string>> codes, std::vector<bool> correct) {
  RolloutGroup g;
  for (auto& c : codes) {
    Rollout r;
    if (c) r.code = code(*c);
    g.rollouts.push_back(std::move(r));
  }
  g.correct_flags = std::move(correct);
  return g;
}

TEST(SimilarityReward, MeanOverCorrectCodes) {
  auto g = flagged_group({"wrong", "ref-a", "ref-b", std::nullopt}, {false, true, true, false});
  CodeSimilarity sim = [](const CodeCandidate&, const CodeCandidate& ref) { return ref.source == "ref-a" ? 0.4 : 0.6; };
  SimilaritySource src;
  EXPECT_NEAR(similarity_reward(0, g, sim, &src), 0.5, 1e-12);
  EXPECT_EQ(src, SimilaritySource::group_mean);
  EXPECT_EQ(similarity_reward(1, g, sim, &src), 1.0);
  EXPECT_EQ(src, SimilaritySource::correct);
  EXPECT_EQ(similarity_reward(3, g, sim, &src), 0.0);
  EXPECT_EQ(src, SimilaritySource::no_code);

  auto none = flagged_group({"x", "y"}, {false, false});
  EXPECT_EQ(similarity_reward(0, none, sim, &src), 0.0);
  EXPECT_EQ(src, SimilaritySource::no_reference);

  auto unflagged = flagged_group({"x"}, {});
  EXPECT_THROW(similarity_reward(0, unflagged, sim), std::logic_error);
}

struct Fixture {
  Fixture()
      : exec(ScriptedExecutor::load_jsonl(TABRL_FIXTURES "/scripted_outcomes.jsonl")),
        judge(JudgeConfig{}),
        ctx{exec, judge, [this](const CodeCandidate& c, const CodeCandidate& r) { return sim(c, r); }} {
    LoadOptions opts;
    for (auto& r : load_records(TABRL_FIXTURES "/dataset/records.jsonl", opts)) records.emplace(r.id, r);
    std::ifstream in(TABRL_FIXTURES "/group_sales.json");
    auto j = nlohmann::json::parse(in);
    for (const auto& r : j["rollouts"]) {
      group.push_back({r["id"], r["response_text"], r["token_count"]});
    }
  }
  ScriptedExecutor exec;
  Judge judge;
  CodeBleuSimilarity sim;
  ScoringContext ctx;
  std::map<std::string, GoldRecord> records;
  std::vector<RolloutInput> group;
};

TEST(ScoreGroup, SalesFixtureBreakdown) {
  Fixture f;
  auto g = score_group(f.group, f.records.at("sales-001"), f.ctx);
  ASSERT_EQ(g.rollouts.size(), 4u);
  const auto& r1 = *g.rollouts[0].breakdown;
  const auto& r2 = *g.rollouts[1].breakdown;
  const auto& r3 = *g.rollouts[2].breakdown;
  const auto& r4 = *g.rollouts[3].breakdown;

  EXPECT_EQ(r1.r_piece, 3.0);
  EXPECT_EQ(r2.r_piece, 1.0);
  EXPECT_EQ(r3.r_piece, 0.5);
  EXPECT_EQ(r4.r_piece, 0.0);
  EXPECT_EQ(r1.stage, RewardStage::correct);
  EXPECT_EQ(r2.stage, RewardStage::wrong_answer);
  EXPECT_EQ(r3.stage, RewardStage::exec_error);
  EXPECT_EQ(r4.stage, RewardStage::format_error);

  EXPECT_EQ(r1.r_table, 1.0);
  EXPECT_EQ(r2.r_table, 1.0);
  EXPECT_EQ(r3.r_table, 0.0);
  EXPECT_EQ(r4.r_table, 0.0);

  EXPECT_EQ(r1.r_sim, 1.0);
  const auto& c1 = g.rollouts[0].code->source;
  EXPECT_NEAR(r2.r_sim, oracle::codebleu(g.rollouts[1].code->source, c1), 1e-9);
  EXPECT_NEAR(r3.r_sim, oracle::codebleu(g.rollouts[2].code->source, c1), 1e-9);
  EXPECT_GT(r2.r_sim, 0.0);
  EXPECT_LT(r2.r_sim, 1.0);
  EXPECT_NEAR(r2.r_sim, 0.9538, 5e-5);
  EXPECT_NEAR(r3.r_sim, 0.6375, 5e-5);
  EXPECT_EQ(r4.r_sim, 0.0);

  EXPECT_DOUBLE_EQ(r1.r_total, 4.5);
  EXPECT_DOUBLE_EQ(r2.r_total, 1.5 + r2.r_sim);
  EXPECT_DOUBLE_EQ(r3.r_total, 0.5 + r3.r_sim);
  EXPECT_EQ(r4.r_total, 0.0);

  EXPECT_TRUE(g.keep);
  EXPECT_FALSE(g.similarity_undefined);
  EXPECT_EQ(g.correct_flags, (std::vector<bool>{true, false, false, false}));
  const double mu = (r1.r_total + r2.r_total + r3.r_total) / 4.0;
  EXPECT_NEAR(g.mu, mu, 1e-12);
  double ss = 0;
  for (double r : g.rewards) ss += (r - mu) * (r - mu);
  EXPECT_NEAR(g.sigma, std::sqrt(ss / 4.0), 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.advantages[i], (g.rewards[i] - mu) / g.sigma, 1e-12);
}

TEST(ScoreGroup, Idempotent) {
  Fixture f;
  auto a = score_group(f.group, f.records.at("sales-001"), f.ctx);
  auto b = score_group(f.group, f.records.at("sales-001"), f.ctx);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.advantages, b.advantages);
  f.ctx.workers = 1;
  auto c = score_group(f.group, f.records.at("sales-001"), f.ctx);
  EXPECT_EQ(a.rewards, c.rewards);
}

TEST(ScoreGroup, AllCorrectGroupIsDiscarded) {
  Fixture f;
  std::vector<RolloutInput> same(3, f.group[0]);
  auto g = score_group(same, f.records.at("sales-001"), f.ctx);
  for (const auto& r : g.rollouts) EXPECT_EQ(r.breakdown->r_sim, 1.0);
  EXPECT_FALSE(g.keep);
  for (double a : g.advantages) EXPECT_EQ(a, 0.0);
}

TEST(ScoreGroup, NoCorrectRolloutMarksSimilarityUndefined) {
  Fixture f;
  std::vector<RolloutInput> wrong{f.group[1], f.group[2], f.group[3]};
  auto g = score_group(wrong, f.records.at("sales-001"), f.ctx);
  EXPECT_TRUE(g.similarity_undefined);
  EXPECT_FALSE(g.keep);
  for (const auto& r : g.rollouts) EXPECT_EQ(r.breakdown->r_sim, 0.0);
}

TEST(ScoreGroup, UnknownCodeScoresAsExecutionFailure) {
  Fixture f;
  std::vector<RolloutInput> one{{"x", "```python\nprint('never scripted')\n```", 1}};
  auto g = score_group(one, f.records.at("sales-001"), f.ctx);
  EXPECT_EQ(g.rollouts[0].breakdown->stage, RewardStage::exec_error);
  EXPECT_EQ(g.rollouts[0].breakdown->r_piece, 0.5);
}

TEST(ScoreGroup, RejectsBadInput) {
  Fixture f;
  EXPECT_THROW(score_group({}, f.records.at("sales-001"), f.ctx), std::invalid_argument);
  auto blank = f.records.at("sales-001");
  blank.gold_answer = " ";
  EXPECT_THROW(score_group(f.group, blank, f.ctx), std::invalid_argument);
  f.ctx.similarity = nullptr;
  EXPECT_THROW(score_group(f.group, f.records.at("sales-001"), f.ctx), std::invalid_argument);
}

TEST(ScoreGroup, BoundsAndOrderingOnRandomGroups) {
  Fixture f;
  std::mt19937 rng(41);
  const auto& gold = f.records.at("sales-001");
  const double upper = 3.0 + f.ctx.rewards.lambda1 + f.ctx.rewards.lambda2;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RolloutInput> inputs(2 + rng() % 6);
    for (auto& in : inputs) in = f.group[rng() % f.group.size()];
    auto g = score_group(inputs, gold, f.ctx);
    double min_correct = 1e9, max_wrong = -1e9;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      EXPECT_GE(g.rewards[i], 0.0);
      EXPECT_LE(g.rewards[i], upper);
      const auto& b = *g.rollouts[i].breakdown;
      EXPECT_GE(b.r_sim, 0.0);
      EXPECT_LE(b.r_sim, 1.0);
      (g.correct_flags[i] ? min_correct : max_wrong) =
          g.correct_flags[i] ? std::min(min_correct, g.rewards[i]) : std::max(max_wrong, g.rewards[i]);
    }
    EXPECT_GT(min_correct, max_wrong);
    const std::size_t n_correct = std::count(g.correct_flags.begin(), g.correct_flags.end(), true);
    EXPECT_EQ(g.keep, n_correct > 0 && n_correct < inputs.size());
  }
}

}  // namespace
}  // namespace tabrl
