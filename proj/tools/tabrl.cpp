#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tabrl/config.hpp"
#include "tabrl/dataset.hpp"
#include "tabrl/evalharness.hpp"
#include "tabrl/service.hpp"
#include "tabrl/simloop.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::string dataset;
  std::string log_level = "warn";
};

tabrl::EngineConfig engine_config(const Common& common) {
  fs::path file = common.config;
  if (file.empty()) {
    if (const char* env = std::getenv("TABRL_CONFIG"); env && *env) file = env;
  }
  auto cfg = tabrl::load_config(file, tabrl::current_environment());
  if (!common.dataset.empty()) cfg.dataset = fs::absolute(common.dataset);
  return cfg;
}

int cmd_serve(const Common& common, const std::string& host, std::optional<int> port) {
  auto cfg = engine_config(common);
  if (!host.empty()) cfg.service.host = host;
  if (port) cfg.service.port = *port;
  cfg.validate();

  // Block the shutdown signals before any thread starts; a dedicated thread
  // receives them with sigwait.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto engine = tabrl::Engine::from_config(cfg);
  tabrl::RewardServer server(*engine, cfg.service);
  const int bound = server.bind();
  std::cout << "listening on http://" << cfg.service.host << ":" << bound << std::endl;
  spdlog::info("{} records loaded, executor {}", engine->records().size(), cfg.sandbox.executor);

  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    spdlog::info("received signal {}, draining", sig);
    server.stop();
  });
  server.run();
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  std::cout << "stopped" << std::endl;
  return kOk;
}

int cmd_score(const Common& common, const std::string& rollouts, const std::string& out_path) {
  auto cfg = engine_config(common);
  auto engine = tabrl::Engine::from_config(cfg);

  std::ifstream in(rollouts);
  if (!in) throw std::runtime_error("cannot open rollouts file " + rollouts);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);

  int rc = kOk;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (tabrl::detail::is_blank(line)) continue;
    auto request = nlohmann::json::parse(line, nullptr, false);
    tabrl::ServiceReply reply = request.is_discarded() ? tabrl::error_reply(400, "malformed JSON")
                                                       : engine->score_request(request);
    if (reply.status == 200) {
      out << reply.payload() << '\n';
      continue;
    }
    rc = kPartial;
    nlohmann::json failure{{"line", lineno}, {"status", reply.status}, {"error", reply.body.at("error")}};
    if (request.is_object() && request.contains("group_id")) failure["group_id"] = request["group_id"];
    spdlog::warn("{}:{}: {}", rollouts, lineno, reply.body.at("error").get<std::string>());
    out << failure.dump() << '\n';
  }
  return rc;
}

int cmd_eval(const Common& common, const std::string& predictions, const std::string& report_path,
             const std::string& format, const std::string& model, const std::string& verdicts) {
  const auto fmt = tabrl::parse_report_format(format);
  auto cfg = engine_config(common);
  auto engine = tabrl::Engine::from_config(cfg);
  auto run = tabrl::load_predictions(predictions, model);

  tabrl::EvalOptions opts;
  opts.extraction = cfg.extraction;
  opts.limits = cfg.sandbox.limits;
  opts.workers = cfg.workers;
  auto report = tabrl::score_run(run, engine->records(), engine->executor(), engine->judge(), opts);

  std::ofstream out(report_path);
  if (!out) throw std::runtime_error("cannot write " + report_path);
  out << tabrl::emit_report(report, fmt);
  if (!verdicts.empty()) {
    std::ofstream log(verdicts);
    if (!log) throw std::runtime_error("cannot write " + verdicts);
    tabrl::write_verdict_log(log, report);
  }
  std::cerr << "accuracy " << report.overall.correct << "/" << report.overall.total << "\n";
  return report.missing_records == 0 ? kOk : kPartial;
}

int cmd_validate(const std::string& dataset, bool skip_files) {
  tabrl::LoadOptions opts;
  opts.check_files = !skip_files;
  try {
    auto records = tabrl::load_records(dataset, opts);
    std::cout << records.size() << " records OK\n";
    if (!skip_files) {
      auto registry = tabrl::TableRegistry::build(records);
      std::size_t sheets = 0;
      for (const auto& [id, list] : registry.tables()) sheets += list.size();
      std::cout << sheets << " table files\n";
    }
    return kOk;
  } catch (const tabrl::DatasetError& e) {
    std::cerr << dataset << ": " << e.what() << "\n";
    return kPartial;
  }
}

struct SimArgs {
  std::size_t records = 100;
  std::size_t group_size = 4;
  std::size_t epochs = 10;
  double p_correct = 0.5;
  std::vector<double> probs;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_sim(const Common& common, const SimArgs& a) {
  auto policy = a.probs.empty() ? tabrl::sim::ScriptedPolicy::with_correct_probability(a.p_correct, a.seed)
                                : tabrl::sim::ScriptedPolicy{{a.probs[0], a.probs[1], a.probs[2], a.probs[3]}, a.seed};
  std::vector<tabrl::GoldRecord> records;
  if (!common.dataset.empty()) {
    tabrl::LoadOptions opts;
    opts.check_files = false;
    records = tabrl::load_records(common.dataset, opts);
  } else {
    records = tabrl::sim::synthetic_records(a.records);
  }
  tabrl::sim::SimOptions opts;
  opts.group_size = a.group_size;
  opts.epochs = a.epochs;
  auto result = tabrl::sim::run_sim(policy, records, opts);

  if (a.out.empty()) {
    tabrl::sim::write_stats_csv(std::cout, result.epochs);
  } else {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    tabrl::sim::write_stats_csv(out, result.epochs);
  }
  const double keep = static_cast<double>(result.groups_kept) / static_cast<double>(result.groups);
  std::cerr << "groups " << result.groups << ", kept " << result.groups_kept << " (" << keep
            << "), expected keep rate "
            << tabrl::sim::binomial_keep_probability(a.group_size, policy.probabilities[0]) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable rewards and evaluation for table-reasoning code rollouts"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "Engine config file (default: $TABRL_CONFIG)");
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto* serve = app.add_subcommand("serve", "Run the HTTP reward service");
  std::string host;
  std::optional<int> port;
  serve->add_option("--dataset", common.dataset, "Dataset JSONL (overrides dataset.path)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port, 0 picks a free one")->check(CLI::Range(0, 65535));

  auto* score = app.add_subcommand("score", "Score rollout groups offline");
  std::string rollouts, out;
  score->add_option("--dataset", common.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--rollouts", rollouts, "One reward request per line")->required()->check(CLI::ExistingFile);
  score->add_option("--out", out, "Output JSONL, one response per group")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a prediction run");
  std::string predictions, report, format = "markdown", model, verdicts;
  eval->add_option("--dataset", common.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--predictions", predictions, "JSONL of {record_id, response}")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--report", report, "Report output path")->required();
  eval->add_option("--format", format, "markdown or json")->check(CLI::IsMember({"markdown", "json"}));
  eval->add_option("--model", model, "Model name for the report row (default: predictions file stem)");
  eval->add_option("--verdicts", verdicts, "Per-record verdict log (JSONL)");

  auto* validate = app.add_subcommand("validate-dataset", "Check a dataset file");
  bool skip_files = false;
  validate->add_option("--dataset", common.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  validate->add_flag("--skip-file-check", skip_files, "Do not require table files to exist");

  auto* simulate = app.add_subcommand("sim", "Simulate dynamic-sampling loops with a scripted policy");
  SimArgs sim_args;
  simulate->add_option("--dataset", common.dataset, "Use these records instead of synthetic ones")
      ->check(CLI::ExistingFile);
  simulate->add_option("--records", sim_args.records, "Number of synthetic records")->check(CLI::PositiveNumber);
  simulate->add_option("--group-size", sim_args.group_size, "Rollouts per group")->check(CLI::Range(2, 1024));
  simulate->add_option("--epochs", sim_args.epochs)->check(CLI::PositiveNumber);
  simulate->add_option("--p-correct", sim_args.p_correct, "Probability of correct code")->check(CLI::Range(0.0, 1.0));
  simulate->add_option("--probs", sim_args.probs, "correct,wrong,broken,no-code probabilities")
      ->expected(4)
      ->delimiter(',');
  simulate->add_option("--seed", sim_args.seed);
  simulate->add_option("--out", sim_args.out, "Stats CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("tabrl"));
  spdlog::set_level(spdlog::level::from_str(common.log_level));

  try {
    if (*serve) return cmd_serve(common, host, port);
    if (*score) return cmd_score(common, rollouts, out);
    if (*eval) return cmd_eval(common, predictions, report, format, model, verdicts);
    if (*validate) return cmd_validate(common.dataset, skip_files);
    if (*simulate) return cmd_sim(common, sim_args);
  } catch (const tabrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const tabrl::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
