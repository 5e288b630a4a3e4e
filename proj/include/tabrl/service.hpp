#pragma once

// Reward engine shared by the HTTP service and the CLI, plus the HTTP server.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tabrl/config.hpp"
#include "tabrl/dataset.hpp"
#include "tabrl/judge.hpp"
#include "tabrl/judge_http.hpp"
#include "tabrl/rewards.hpp"
#include "tabrl/sandbox.hpp"
#include "tabrl/subprocess_executor.hpp"

namespace tabrl {

struct ServiceReply {
  int status = 200;
  nlohmann::json body;

  /// The exact bytes sent over HTTP and written by the CLI.
  std::string payload() const { return body.dump(); }
};

struct RewardRequest {
  std::string group_id;
  std::string record_id;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::vector<RolloutInput> rollouts;
};

class RequestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline RewardRequest parse_reward_request(const nlohmann::json& j) {
  if (!j.is_object()) throw RequestError("request must be a JSON object");
  auto str = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw RequestError(std::string("field ") + key + " must be a string");
    return it->get<std::string>();
  };
  auto lambda = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw RequestError(std::string("field ") + key + " must be a number");
    double v = it->get<double>();
    if (!std::isfinite(v)) throw RequestError(std::string("field ") + key + " must be finite");
    return v;
  };
  RewardRequest r;
  r.group_id = str("group_id");
  r.record_id = str("record_id");
  r.lambda1 = lambda("lambda1");
  r.lambda2 = lambda("lambda2");
  auto it = j.find("rollouts");
  if (it == j.end() || !it->is_array() || it->empty()) throw RequestError("field rollouts must be a non-empty array");
  std::set<std::string> ids;
  for (const auto& e : *it) {
    if (!e.is_object()) throw RequestError("rollout must be an object");
    RolloutInput in;
    auto id = e.find("id");
    auto text = e.find("response_text");
    if (id == e.end() || !id->is_string()) throw RequestError("rollout id must be a string");
    if (text == e.end() || !text->is_string()) throw RequestError("rollout response_text must be a string");
    in.id = id->get<std::string>();
    in.response = text->get<std::string>();
    if (auto tc = e.find("token_count"); tc != e.end()) {
      if (!tc->is_number_integer() || tc->get<std::int64_t>() < 1) {
        throw RequestError("rollout token_count must be a positive integer");
      }
      in.token_count = tc->get<std::size_t>();
    }
    if (!ids.insert(in.id).second) throw RequestError("duplicate rollout id " + in.id);
    r.rollouts.push_back(std::move(in));
  }
  return r;
}

inline nlohmann::json to_json(const std::string& group_id, const RolloutGroup& g) {
  nlohmann::json rollouts = nlohmann::json::array();
  for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
    const auto& r = g.rollouts[i];
    const auto& b = *r.breakdown;
    rollouts.push_back({{"id", r.id},
                        {"r_piece", b.r_piece},
                        {"r_table", b.r_table},
                        {"r_sim", b.r_sim},
                        {"r_total", b.r_total},
                        {"advantage", g.advantages[i]},
                        {"stage", to_string(b.stage)},
                        {"sim_source", to_string(b.sim_source)}});
  }
  return {{"group_id", group_id},
          {"keep", g.keep},
          {"mu", g.mu},
          {"sigma", g.sigma},
          {"similarity_undefined", g.similarity_undefined},
          {"rollouts", std::move(rollouts)}};
}

inline ServiceReply error_reply(int status, std::string message) {
  return {status, {{"error", std::move(message)}}};
}

/// Immutable after construction apart from the executor pool and judge cache.
class Engine {
 public:
  Engine(EngineConfig cfg, std::vector<GoldRecord> records, std::unique_ptr<Executor> executor,
         std::unique_ptr<LlmJudgeBackend> llm = nullptr)
      : cfg_(std::move(cfg)),
        records_(std::move(records)),
        executor_(std::move(executor)),
        llm_(std::move(llm)),
        judge_(cfg_.judge, llm_.get()) {
    cfg_.validate();
    if (!executor_) throw std::invalid_argument("engine needs an executor");
    for (const auto& r : records_) index_.emplace(r.id, &r);
  }

  /// Loads the dataset and builds the configured executor and judge backend.
  static std::unique_ptr<Engine> from_config(const EngineConfig& cfg, const LoadOptions& load = {}) {
    cfg.validate();
    if (cfg.dataset.empty()) throw ConfigError("dataset.path is not set");
    auto records = load_records(cfg.dataset, load);
    std::unique_ptr<Executor> exec;
    if (cfg.sandbox.executor == "scripted") {
      exec = std::make_unique<ScriptedExecutor>(ScriptedExecutor::load_jsonl(cfg.sandbox.scripted_outcomes));
    } else {
      SubprocessExecutorConfig sc;
      sc.runner_command = cfg.sandbox.runner;
      sc.max_concurrent = cfg.sandbox.max_concurrent;
      if (!cfg.sandbox.scratch_root.empty()) sc.scratch_root = cfg.sandbox.scratch_root;
      exec = std::make_unique<SubprocessExecutor>(std::move(sc));
    }
    std::unique_ptr<LlmJudgeBackend> llm;
    if (cfg.judge.use_llm_judge) llm = std::make_unique<HttpJudgeClient>(cfg.judge_http);
    return std::make_unique<Engine>(cfg, std::move(records), std::move(exec), std::move(llm));
  }

  const EngineConfig& config() const { return cfg_; }
  const std::vector<GoldRecord>& records() const { return records_; }
  Executor& executor() const { return *executor_; }
  const Judge& judge() const { return judge_; }

  const GoldRecord* find(std::string_view id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : it->second;
  }

  RolloutGroup score(const RewardRequest& req, const GoldRecord& gold) const {
    RewardConfig rewards = cfg_.rewards;
    if (req.lambda1) rewards.lambda1 = *req.lambda1;
    if (req.lambda2) rewards.lambda2 = *req.lambda2;
    auto sim = std::make_shared<CodeBleuSimilarity>(cfg_.codesim);
    ScoringContext ctx{*executor_, judge_,
                       [sim](const CodeCandidate& c, const CodeCandidate& r) { return (*sim)(c, r); },
                       cfg_.extraction,
                       cfg_.sandbox.limits,
                       rewards,
                       cfg_.clip.sigma_floor,
                       cfg_.workers};
    return score_group(req.rollouts, gold, ctx);
  }

  /// Never throws; failures become 4xx/5xx replies.
  ServiceReply score_request(const nlohmann::json& request) const {
    RewardRequest req;
    try {
      req = parse_reward_request(request);
    } catch (const RequestError& e) {
      return error_reply(400, e.what());
    }
    const auto* gold = find(req.record_id);
    if (!gold) return error_reply(404, "unknown record");
    try {
      return {200, to_json(req.group_id, score(req, *gold))};
    } catch (const std::exception& e) {
      spdlog::error("group {}: scoring failed: {}", req.group_id, e.what());
      return error_reply(500, std::string("scoring failed: ") + e.what());
    }
  }

  ServiceReply score_request(std::string_view body) const {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) return error_reply(400, "malformed JSON");
    return score_request(j);
  }
  ServiceReply score_request(const std::string& body) const { return score_request(std::string_view(body)); }
  ServiceReply score_request(const char* body) const { return score_request(std::string_view(body)); }

 private:
  EngineConfig cfg_;
  std::vector<GoldRecord> records_;
  std::unique_ptr<Executor> executor_;
  std::unique_ptr<LlmJudgeBackend> llm_;
  Judge judge_;
  std::map<std::string, const GoldRecord*, std::less<>> index_;
};

/// POST /v1/reward-groups, GET /healthz, GET /v1/config.
class RewardServer {
 public:
  RewardServer(const Engine& engine, ServiceSettings settings) : engine_(engine), settings_(std::move(settings)) {
    const auto threads = std::max<std::size_t>(1, settings_.threads);
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_payload_max_length(64u << 20);

    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      if (draining_) return send(res, error_reply(503, "draining"));
      send(res, {200, {{"status", "ok"}}});
    });
    server_.Get("/v1/config", [this](const httplib::Request&, httplib::Response& res) {
      send(res, {200, engine_.config().redacted()});
    });
    server_.Post("/v1/reward-groups", [this](const httplib::Request& req, httplib::Response& res) {
      if (draining_) return send(res, error_reply(503, "draining"));
      send(res, engine_.score_request(std::string_view(req.body)));
    });
  }

  /// Port 0 picks a free port. Returns the bound port or throws.
  int bind() {
    int port = settings_.port;
    if (port == 0) {
      port = server_.bind_to_any_port(settings_.host);
    } else if (!server_.bind_to_port(settings_.host, port)) {
      port = -1;
    }
    if (port < 0) {
      throw std::runtime_error("cannot bind " + settings_.host + ":" + std::to_string(settings_.port));
    }
    port_ = port;
    return port;
  }

  /// Blocks until stop().
  void run() { server_.listen_after_bind(); }

  /// Refuses new work and lets in-flight requests finish.
  void stop() {
    draining_ = true;
    server_.stop();
  }

  int port() const { return port_; }
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  static void send(httplib::Response& res, const ServiceReply& reply) {
    res.status = reply.status;
    res.set_content(reply.payload(), "application/json");
  }

  const Engine& engine_;
  ServiceSettings settings_;
  httplib::Server server_;
  std::atomic<bool> draining_{false};
  int port_ = -1;
};

}  // namespace tabrl
