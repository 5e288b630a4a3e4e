// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "oracles.hpp"
#include "tabrl/config.hpp"
#include "tabrl/dataset.hpp"
#include "tabrl/evalharness.hpp"
#include "tabrl/rewards.hpp"
#include "tabrl/rlmath.hpp"
#include "tabrl/service.hpp"
#include "tabrl/simloop.hpp"

namespace fs = std::filesystem;
using namespace tabrl;

namespace {

const std::string kFixtures = TABRL_FIXTURES;

struct Failure {
  std::string why;
};

void require(bool cond, const std::string& why) {
  if (!cond) throw Failure{why};
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void()>& body) {
  const auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  try {
    body();
  } catch (const Failure& f) {
    ok = false;
    detail = f.why;
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (ok && elapsed >= budget_s) {
    ok = false;
    detail = "took " + num(elapsed) + " s, budget " + num(budget_s) + " s";
  }
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.3fs", elapsed);
  std::cout << (ok ? "PASS " : "FAIL ") << name << " (" << timing << ")";
  if (!detail.empty()) std::cout << ": " << detail;
  std::cout << std::endl;
  failures += ok ? 0 : 1;
}

std::map<std::string, GoldRecord> fixture_records() {
  std::map<std::string, GoldRecord> out;
  for (auto& r : load_records(kFixtures + "/dataset/records.jsonl")) out.emplace(r.id, r);
  return out;
}

std::vector<RolloutInput> sales_group() {
  auto j = nlohmann::json::parse(slurp(kFixtures + "/group_sales.json"));
  std::vector<RolloutInput> out;
  for (const auto& r : j["rollouts"]) out.push_back({r["id"], r["response_text"], r["token_count"]});
  return out;
}

void piecewise_levels() {
  ScriptedExecutor exec(ScriptedExecutor::load_jsonl(kFixtures + "/scripted_outcomes.jsonl"));
  const Judge judge(JudgeConfig{});
  CodeBleuSimilarity sim;
  ScoringContext ctx{exec, judge, [&](const CodeCandidate& c, const CodeCandidate& r) { return sim(c, r); }};
  auto g = score_group(sales_group(), fixture_records().at("sales-001"), ctx);
  // r4 no code, r3 execution failure, r2 wrong answer, r1 correct.
  const double want[] = {3.0, 1.0, 0.5, 0.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double got = g.rollouts[i].breakdown->r_piece;
    require(got == want[i], g.rollouts[i].id + ": r_piece " + num(got) + " != " + num(want[i]));
  }
}

void table_f1() {
  const std::vector<std::string> universe{"a.csv", "data/b.csv", "c.xlsx", "d/e.csv"};
  int pairs = 0;
  for (unsigned p = 0; p < 16; ++p) {
    for (unsigned q = 0; q < 16; ++q) {
      PathSet pred, gold;
      for (unsigned i = 0; i < 4; ++i) {
        if (p >> i & 1) pred.insert(universe[i]);
        if (q >> i & 1) gold.insert(universe[i]);
      }
      require(table_path_f1(pred, gold) == oracle::f1(pred, gold),
              "mismatch at subsets " + std::to_string(p) + "/" + std::to_string(q));
      ++pairs;
    }
  }
  require(pairs == 256, "expected 256 pairs");
}

void total() {
  const double got = total_reward(3.0, 2.0 / 3.0, 1.0, RewardConfig{});
  require(std::fabs(got - 4.3333333333333333) <= 1e-9, "got " + num(got));
}

void advantages() {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(-4.5, 4.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(2 + rng() % 15);
    for (auto& x : r) x = std::round(u(rng) * 4) / 4;
    auto a = group_advantages(r);
    const double n = static_cast<double>(r.size());
    double mean = 0;
    for (double x : a.advantages) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : a.advantages) ss += (x - mean) * (x - mean);
    require(std::fabs(mean) <= 1e-9, "mean " + num(mean) + " on trial " + std::to_string(trial));
    if (a.sigma > 1e-3) {
      require(std::fabs(std::sqrt(ss / n) - 1.0) <= 1e-6, "std off on trial " + std::to_string(trial));
    }
    const double shift = u(rng) * 10;
    std::vector<double> shifted(r);
    for (auto& x : shifted) x += shift;
    auto b = group_advantages(shifted);
    for (std::size_t i = 0; i < r.size(); ++i) {
      require(std::fabs(a.advantages[i] - b.advantages[i]) <= 1e-9, "shift changed trial " + std::to_string(trial));
    }
  }
}

void dynamic_sampling() {
  for (std::size_t g = 1; g <= 6; ++g) {
    for (unsigned bits = 0; bits < (1u << g); ++bits) {
      std::vector<bool> flags(g);
      std::size_t k = 0;
      for (std::size_t i = 0; i < g; ++i) k += (flags[i] = bits >> i & 1);
      require(dynamic_sampling_keep(flags) == (k > 0 && k < g),
              "G=" + std::to_string(g) + " flags=" + std::to_string(bits));
      if (k == 0 || k == g) require(!dynamic_sampling_keep(flags), "uniform group kept");
    }
  }
}

void clipped_surrogate() {
  const ClipConfig cfg{0.2, 0.28};
  const double a = clipped_surrogate_term(1.5, 1.0, cfg);
  const double b = clipped_surrogate_term(0.5, -1.0, cfg);
  require(a == 1.28, "ratio 1.5, A 1 gave " + num(a));
  require(b == -0.8, "ratio 0.5, A -1 gave " + num(b));
}

void codebleu_properties() {
  using namespace tabrl::codesim;
  const auto& snippets = oracle::identity_snippets();
  require(snippets.size() == 20, "expected 20 identity snippets");
  for (const auto& s : snippets) {
    require(analyze(s).tree.parse_ok, "snippet does not parse: " + s);
    std::vector<std::string> refs{s};
    const double v = codebleu(s, refs);
    require(v == 1.0, "codebleu(x,[x]) = " + num(v) + " for: " + s);
  }

  const CodeSimConfig cfg;
  auto weight = [&](const std::string& t) { return cfg.keywords.contains(t) ? cfg.keyword_weight : 1.0; };
  const auto& corpus = oracle::corpus();
  require(corpus.size() == 10, "expected a 10-pair corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    auto c = analyze(p.candidate);
    auto r = analyze(p.reference);
    const CodeAnalysis* refs[] = {&r};
    auto s = codebleu_components(c, refs, cfg);
    const std::string tag = "pair " + std::to_string(i) + " ";
    require(std::fabs(s.ngram - oracle::plain_bleu(c.words, {r.words})) <= 1e-9, tag + "ngram");
    require(std::fabs(s.weighted - oracle::bleu(c.words, {r.words}, 4, weight)) <= 1e-9, tag + "weighted ngram");
    require(s.syntax && std::fabs(*s.syntax - oracle::syntax_match(c.tree, {r.tree})) <= 1e-9, tag + "syntax");
    require(oracle::edges_of(c.dataflow) == p.candidate_edges, tag + "candidate dataflow edges");
    require(oracle::edges_of(r.dataflow) == p.reference_edges, tag + "reference dataflow edges");
    require(s.dataflow &&
                std::fabs(*s.dataflow - oracle::dataflow_match(p.candidate_edges, {p.reference_edges})) <= 1e-9,
            tag + "dataflow");
  }

  std::vector<std::string> pool = snippets;
  for (const auto& p : corpus) {
    pool.push_back(p.candidate);
    pool.push_back(p.reference);
  }
  std::mt19937 rng(99);
  for (int t = 0; t < 200; ++t) {
    const auto& c = pool[rng() % pool.size()];
    const auto& r1 = pool[rng() % pool.size()];
    const auto& r2 = pool[rng() % pool.size()];
    std::vector<std::string> one{r1}, two{r1, r2};
    const double a = codebleu(c, one), b = codebleu(c, two);
    require(b + 1e-12 >= a, "adding a reference lowered the score on triple " + std::to_string(t));
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TABRL_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void end_to_end_group() {
  const auto body = nlohmann::json::parse(slurp(kFixtures + "/group_sales.json"));
  const auto dir = fs::temp_directory_path() / ("tabrl_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream o(dir / "group.jsonl");
    o << body.dump() << "\n";
  }
  const std::string cfg_path = kFixtures + "/engine.toml";
  const int rc = run_cli("--config " + cfg_path + " score --dataset " + kFixtures + "/dataset/records.jsonl --rollouts " +
                         (dir / "group.jsonl").string() + " --out " + (dir / "out.jsonl").string());
  require(rc == 0, "cli score exited " + std::to_string(rc));
  std::string cli_line = slurp(dir / "out.jsonl");
  require(!cli_line.empty() && cli_line.back() == '\n', "cli output is not one line");
  cli_line.pop_back();
  fs::remove_all(dir);

  auto engine = Engine::from_config(load_config(cfg_path, {}));
  auto settings = engine->config().service;
  settings.port = 0;
  RewardServer server(*engine, settings);
  const int port = server.bind();
  std::thread t([&] { server.run(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto res = client.Post("/v1/reward-groups", body.dump(), "application/json");
  server.stop();
  t.join();
  require(res && res->status == 200, "http request failed");
  require(res->body == cli_line, "cli and http bytes differ");

  auto reply = nlohmann::json::parse(res->body);
  const auto& rs = reply["rollouts"];
  const auto& codes = body["rollouts"];
  auto code_of = [&](std::size_t i) { return extract_code(codes[i]["response_text"].get<std::string>())->source; };
  const double sim2 = oracle::codebleu(code_of(1), code_of(0));
  const double sim3 = oracle::codebleu(code_of(2), code_of(0));
  struct Row {
    double piece, table, sim;
  };
  const Row want[] = {{3.0, 1.0, 1.0}, {1.0, 1.0, sim2}, {0.5, 0.0, sim3}, {0.0, 0.0, 0.0}};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& r = rs[i];
    const std::string id = r["id"];
    require(r["r_piece"].get<double>() == want[i].piece, id + " r_piece");
    require(r["r_table"].get<double>() == want[i].table, id + " r_table");
    require(std::fabs(r["r_sim"].get<double>() - want[i].sim) <= 1e-9, id + " r_sim " + num(r["r_sim"]));
    const double total = want[i].piece + 0.5 * want[i].table + want[i].sim;
    require(std::fabs(r["r_total"].get<double>() - total) <= 1e-9, id + " r_total");
  }
  require(rs[1]["r_sim"].get<double>() > 0 && rs[1]["r_sim"].get<double>() < 1, "wrong-answer r_sim not in (0,1)");
  require(reply["keep"] == true, "group should be kept");
}

void simulator_keep_rate() {
  auto records = sim::synthetic_records(250);
  sim::SimOptions opts;
  opts.group_size = 4;
  opts.epochs = 4;
  auto res = sim::run_sim(sim::ScriptedPolicy::with_correct_probability(0.5, 1), records, opts);
  require(res.groups == 1000, "expected 1000 groups, got " + std::to_string(res.groups));
  const double keep = static_cast<double>(res.groups_kept) / static_cast<double>(res.groups);
  const double exact = sim::binomial_keep_probability(4, 0.5);
  require(exact == 0.875, "binomial value " + num(exact));
  require(std::fabs(keep - exact) <= 0.03, "keep rate " + num(keep));
}

void classifier() {
  using T = TableDifficulty;
  const std::tuple<bool, bool, bool, T> rows[] = {
      {false, false, false, T::simple}, {false, true, false, T::medium},  {false, false, true, T::medium},
      {false, true, true, T::complex},  {true, false, false, T::complex}, {true, true, false, T::complex},
      {true, false, true, T::complex},  {true, true, true, T::complex},
  };
  for (const auto& [mt, ms, ch, want] : rows) {
    require(classify_table_difficulty(mt, ms, ch) == want,
            "(" + std::to_string(mt) + "," + std::to_string(ms) + "," + std::to_string(ch) + ")");
  }
}

void eval_harness() {
  auto records = load_records(kFixtures + "/dataset/records.jsonl");
  ScriptedExecutor exec(ScriptedExecutor::load_jsonl(kFixtures + "/scripted_outcomes.jsonl"));
  const Judge judge(JudgeConfig{});
  auto rep = score_run(load_predictions(kFixtures + "/predictions.jsonl"), records, exec, judge);
  auto cell = [&](const Cell& got, Cell want, const std::string& name) {
    require(got == want, name + " " + std::to_string(got.correct) + "/" + std::to_string(got.total));
  };
  cell(rep.overall, {3, 6}, "overall");
  cell(rep.by_language.at("zh"), {2, 3}, "zh");
  cell(rep.by_language.at("en"), {1, 3}, "en");
  cell(rep.by_question_difficulty.at("easy"), {2, 2}, "easy");
  cell(rep.by_question_difficulty.at("medium"), {0, 2}, "medium");
  cell(rep.by_question_difficulty.at("hard"), {1, 2}, "hard");
  cell(rep.by_table_difficulty.at("simple"), {1, 2}, "simple");
  cell(rep.by_table_difficulty.at("medium"), {1, 2}, "table medium");
  cell(rep.by_table_difficulty.at("complex"), {1, 2}, "complex");
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  criterion("piecewise reward levels (0, 0.5, 1, 3) under the scripted executor", 1.0, piecewise_levels);
  criterion("table-path F1 equals the brute-force oracle on all 256 subset pairs", 1.0, table_f1);
  criterion("total reward (3, 2/3, 1) with lambda (0.5, 1.0) is 4.3333", 1.0, total);
  criterion("advantages: 1000 random groups normalized and shift invariant", 5.0, advantages);
  criterion("dynamic sampling matches the count rule for all flag vectors, G <= 6", 1.0, dynamic_sampling);
  criterion("clipped surrogate gives 1.28 and -0.8", 1.0, clipped_surrogate);
  criterion("codebleu identity, component oracles and reference monotonicity", 30.0, codebleu_properties);
  criterion("end-to-end fixture group: derived breakdown, cli and http byte-identical", 5.0, end_to_end_group);
  criterion("simulator keep rate within 0.03 of 0.875 over 1000 groups", 30.0, simulator_keep_rate);
  criterion("table difficulty classifier on all 8 flag triples", 1.0, classifier);
  criterion("eval harness reproduces the stratified fixture tally", 5.0, eval_harness);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
