#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "tabrl/service.hpp"

namespace fs = std::filesystem;

namespace tabrl {
namespace {

const std::string kFixtures = TABRL_FIXTURES;
const std::string kCli = TABRL_CLI;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<Engine> fixture_engine() {
  return Engine::from_config(load_config(kFixtures + "/engine.toml", {}));
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("tabrl_service_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

struct Run {
  int status = -1;
  std::string out;
};

Run sh(const std::string& cmd) {
  Run r;
  FILE* p = ::popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

TEST(Request, Validation) {
  auto ok = nlohmann::json::parse(slurp(kFixtures + "/group_sales.json"));
  auto req = parse_reward_request(ok);
  EXPECT_EQ(req.group_id, "g1");
  EXPECT_EQ(req.rollouts.size(), 4u);
  EXPECT_EQ(req.rollouts[0].token_count, 40u);
  EXPECT_FALSE(req.lambda1);

  auto broken = [&](auto&& mutate) {
    auto j = ok;
    mutate(j);
    try {
      parse_reward_request(j);
    } catch (const RequestError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(broken([](auto& j) { j.erase("group_id"); }), "field group_id must be a string");
  EXPECT_EQ(broken([](auto& j) { j["record_id"] = 5; }), "field record_id must be a string");
  EXPECT_EQ(broken([](auto& j) { j["rollouts"] = nlohmann::json::array(); }),
            "field rollouts must be a non-empty array");
  EXPECT_EQ(broken([](auto& j) { j["rollouts"][1]["id"] = "r1"; }), "duplicate rollout id r1");
  EXPECT_EQ(broken([](auto& j) { j["rollouts"][0]["token_count"] = 0; }),
            "rollout token_count must be a positive integer");
  EXPECT_EQ(broken([](auto& j) { j["rollouts"][0].erase("response_text"); }),
            "rollout response_text must be a string");
  EXPECT_EQ(broken([](auto& j) { j["lambda2"] = "x"; }), "field lambda2 must be a number");
  EXPECT_EQ(broken([](auto& j) { j["lambda1"] = nullptr; }), "");
}

TEST(Engine, ScoresTheFixtureGroup) {
  auto engine = fixture_engine();
  auto reply = engine->score_request(slurp(kFixtures + "/group_sales.json"));
  ASSERT_EQ(reply.status, 200) << reply.payload();
  const auto& b = reply.body;
  EXPECT_EQ(b["group_id"], "g1");
  EXPECT_EQ(b["keep"], true);
  ASSERT_EQ(b["rollouts"].size(), 4u);
  EXPECT_EQ(b["rollouts"][0]["r_total"], 4.5);
  EXPECT_EQ(b["rollouts"][0]["stage"], "correct");
  EXPECT_EQ(b["rollouts"][1]["stage"], "wrong_answer");
  EXPECT_EQ(b["rollouts"][2]["stage"], "exec_error");
  EXPECT_EQ(b["rollouts"][3]["stage"], "format_error");
  EXPECT_EQ(b["rollouts"][3]["r_total"], 0.0);
  EXPECT_EQ(b["rollouts"][1]["sim_source"], "group_mean");
  // Identical requests give identical bytes.
  EXPECT_EQ(engine->score_request(slurp(kFixtures + "/group_sales.json")).payload(), reply.payload());
}

TEST(Engine, ErrorStatuses) {
  auto engine = fixture_engine();
  EXPECT_EQ(engine->score_request(std::string_view("{oops")).status, 400);
  auto unknown = nlohmann::json::parse(slurp(kFixtures + "/group_sales.json"));
  unknown["record_id"] = "nope";
  auto r = engine->score_request(unknown);
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.payload(), R"({"error":"unknown record"})");
  EXPECT_EQ(engine->score_request(nlohmann::json::array()).status, 400);
}

TEST(Engine, LambdaOverridesApplyPerRequest) {
  auto engine = fixture_engine();
  auto j = nlohmann::json::parse(slurp(kFixtures + "/group_sales.json"));
  j["lambda1"] = 0.0;
  j["lambda2"] = 0.0;
  auto r = engine->score_request(j);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["rollouts"][0]["r_total"], 3.0);
  EXPECT_EQ(r.body["rollouts"][1]["r_total"], 1.0);
  EXPECT_EQ(engine->config().rewards.lambda1, 0.5);
}

TEST(Server, HealthConfigAndScoring) {
  auto engine = fixture_engine();
  auto settings = engine->config().service;
  settings.port = 0;
  RewardServer server(*engine, settings);
  const int port = server.bind();
  ASSERT_GT(port, 0);
  std::thread t([&] { server.run(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->body, R"({"status":"ok"})");

  auto cfg = client.Get("/v1/config");
  ASSERT_TRUE(cfg);
  EXPECT_EQ(nlohmann::json::parse(cfg->body)["sandbox"]["executor"], "scripted");

  const auto body = slurp(kFixtures + "/group_sales.json");
  auto scored = client.Post("/v1/reward-groups", body, "application/json");
  ASSERT_TRUE(scored);
  EXPECT_EQ(scored->status, 200);
  EXPECT_EQ(scored->body, engine->score_request(body).payload());

  auto bad = client.Post("/v1/reward-groups", "not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  // Concurrent requests all succeed with the same bytes.
  std::vector<std::thread> clients;
  std::vector<std::string> bodies(8);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    clients.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      if (auto res = c.Post("/v1/reward-groups", body, "application/json")) bodies[i] = res->body;
    });
  }
  for (auto& c : clients) c.join();
  for (const auto& b : bodies) EXPECT_EQ(b, scored->body);

  server.stop();
  t.join();
  EXPECT_FALSE(server.running());
}

TEST(Cli, ScoreMatchesHttpBytes) {
  auto out = scratch("scored.jsonl");
  auto r = sh(kCli + " --config " + kFixtures + "/engine.toml score --dataset " + kFixtures +
              "/dataset/records.jsonl --rollouts " + kFixtures + "/rollouts.jsonl --out " + out.string());
  ASSERT_EQ(r.status, 0);
  std::istringstream lines(slurp(out));
  std::string g1, g2;
  std::getline(lines, g1);
  std::getline(lines, g2);

  auto engine = fixture_engine();
  EXPECT_EQ(g1, engine->score_request(slurp(kFixtures + "/group_sales.json")).payload());
  auto second = nlohmann::json::parse(g2);
  EXPECT_EQ(second["group_id"], "g2");
  // lambda1 = 0.25 on the correct city rollout: 3 + 0.25 * 1 + 1.
  EXPECT_EQ(second["rollouts"][0]["r_total"], 4.25);
}

TEST(Cli, ScoreExitCodes) {
  auto out = scratch("partial.jsonl");
  const std::string base = kCli + " --config " + kFixtures + "/engine.toml score --dataset " + kFixtures +
                           "/dataset/records.jsonl --out " + out.string() + " --rollouts ";
  auto partial = sh(base + kFixtures + "/rollouts_with_unknown.jsonl");
  EXPECT_EQ(partial.status, 1);
  std::istringstream lines(slurp(out));
  std::vector<nlohmann::json> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(nlohmann::json::parse(l));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["group_id"], "g1");
  EXPECT_EQ(rows[1]["status"], 404);
  EXPECT_EQ(rows[1]["group_id"], "g3");
  EXPECT_EQ(rows[1]["line"], 2);
  EXPECT_EQ(rows[2]["group_id"], "g2");

  EXPECT_EQ(sh(base + "/nonexistent.jsonl").status, 2);
  EXPECT_EQ(sh(kCli + " score").status, 2);
  EXPECT_EQ(sh(kCli + " --help").status, 0);
  EXPECT_EQ(sh(kCli + " --config /nonexistent.toml score --dataset " + kFixtures + "/dataset/records.jsonl --out " +
               out.string() + " --rollouts " + kFixtures + "/rollouts.jsonl")
                .status,
            2);
}

TEST(Cli, EvalReport) {
  auto report = scratch("report.md");
  auto verdicts = scratch("verdicts.jsonl");
  auto r = sh(kCli + " --config " + kFixtures + "/engine.toml eval --dataset " + kFixtures +
              "/dataset/records.jsonl --predictions " + kFixtures + "/predictions.jsonl --report " + report.string() +
              " --verdicts " + verdicts.string() + " --model fixture");
  ASSERT_EQ(r.status, 0);
  EXPECT_NE(slurp(report).find("| fixture | 50.00 | 66.67 | 33.33 | 100.00 | 0.00 | 50.00 | 50.00 | 50.00 | 50.00 |"),
            std::string::npos)
      << slurp(report);
  auto json_report = scratch("report.json");
  r = sh(kCli + " --config " + kFixtures + "/engine.toml eval --dataset " + kFixtures +
         "/dataset/records.jsonl --predictions " + kFixtures + "/predictions.jsonl --format json --report " +
         json_report.string());
  ASSERT_EQ(r.status, 0);
  auto j = nlohmann::json::parse(slurp(json_report));
  EXPECT_EQ(j["model"], "predictions");
  EXPECT_EQ(j["overall"]["correct"], 3);
}

TEST(Cli, ValidateDataset) {
  auto ok = sh(kCli + " validate-dataset --dataset " + kFixtures + "/dataset/records.jsonl");
  EXPECT_EQ(ok.status, 0);
  EXPECT_EQ(ok.out, "6 records OK\n9 table files\n");

  auto bad = scratch("bad.jsonl");
  {
    std::ofstream o(bad);
    o << slurp(kFixtures + "/dataset/records.jsonl").substr(0, 40) << "\n";
  }
  EXPECT_EQ(sh(kCli + " validate-dataset --dataset " + bad.string()).status, 1);
  EXPECT_EQ(sh(kCli + " validate-dataset --dataset /nonexistent.jsonl").status, 2);
}

TEST(Cli, ServeStopsOnSigterm) {
  int pipefd[2];
  ASSERT_EQ(::pipe(pipefd), 0);
  pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    ::dup2(pipefd[1], STDOUT_FILENO);
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    const std::string cfg = kFixtures + "/engine.toml";
    ::execl(kCli.c_str(), kCli.c_str(), "--config", cfg.c_str(), "serve", "--port", "0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(pipefd[1]);
  FILE* out = ::fdopen(pipefd[0], "r");
  char line[256] = {0};
  ASSERT_NE(std::fgets(line, sizeof line, out), nullptr);
  std::string first(line);
  const std::string prefix = "listening on http://127.0.0.1:";
  ASSERT_EQ(first.rfind(prefix, 0), 0u) << first;
  const int port = std::stoi(first.substr(prefix.size()));

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  ASSERT_NE(std::fgets(line, sizeof line, out), nullptr);
  EXPECT_EQ(std::string(line), "stopped\n");
  std::fclose(out);
}

TEST(Cli, SimWritesStats) {
  auto csv = scratch("sim.csv");
  auto r = sh(kCli + " sim --records 50 --epochs 2 --seed 3 --out " + csv.string());
  ASSERT_EQ(r.status, 0);
  auto text = slurp(csv);
  EXPECT_EQ(text.rfind("epoch,groups_kept,filter_rate,mean_total_reward,mean_advantage_abs\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(sh(kCli + " sim --probs 0.5,0.5,0.5,0.5").status, 2);
}

}  // namespace
}  // namespace tabrl
