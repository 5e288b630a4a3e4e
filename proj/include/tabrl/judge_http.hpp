#pragma once

// HTTP client for an external LLM judge.
//
// Wire format: POST <endpoint> with {"question","gold","candidate"}; the reply
// is {"verdict":"CORRECT"|"INCORRECT"} with an optional "rationale".

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tabrl/judge.hpp"

namespace tabrl {

struct HttpJudgeConfig {
  /// Full URL, e.g. http://127.0.0.1:9000/judge
  std::string url;
  std::string token;
  std::size_t max_inflight = 8;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{30};
  bool cache_enabled = true;
};

/// Splits "http://host:port/path" into ("http://host:port", "/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("judge url lacks a scheme: " + url);
  auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

class HttpJudgeClient final : public LlmJudgeBackend {
 public:
  explicit HttpJudgeClient(HttpJudgeConfig cfg)
      : cfg_(std::move(cfg)), inflight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_inflight))) {
    std::tie(base_, path_) = split_url(cfg_.url);
  }

  LlmReply ask(const JudgeQuery& query) override {
    if (cfg_.cache_enabled) {
      std::shared_lock lock(cache_mu_);
      if (auto it = cache_.find(query); it != cache_.end()) return it->second;
    }
    LlmReply reply = ask_uncached(query);
    if (cfg_.cache_enabled && reply.correct) {
      std::unique_lock lock(cache_mu_);
      // First writer wins so repeated queries stay byte-identical.
      reply = cache_.emplace(query, reply).first->second;
    }
    return reply;
  }

  std::size_t requests_sent() const { return sent_.load(); }

 private:
  LlmReply ask_uncached(const JudgeQuery& query) {
    const std::string body =
        nlohmann::json{{"question", query.question}, {"gold", query.gold}, {"candidate", query.candidate}}.dump();
    httplib::Headers headers;
    if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);

    auto backoff = cfg_.initial_backoff;
    bool retried_bad_reply = false;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Result res{nullptr, httplib::Error::Unknown};
      {
        inflight_.acquire();
        httplib::Client client(base_);
        client.set_connection_timeout(cfg_.timeout);
        client.set_read_timeout(cfg_.timeout);
        sent_.fetch_add(1);
        res = client.Post(path_, headers, body, "application/json");
        inflight_.release();
      }
      if (!res) {
        last_error = "judge endpoint unreachable: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "judge endpoint returned HTTP " + std::to_string(res->status);
        continue;
      }
      auto parsed = parse_reply(res->body);
      if (parsed.correct) return parsed;
      // A malformed verdict earns exactly one retry.
      last_error = parsed.error;
      if (retried_bad_reply) break;
      retried_bad_reply = true;
    }
    return LlmReply{std::nullopt, {}, last_error};
  }

  static LlmReply parse_reply(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("verdict") || !j["verdict"].is_string()) {
      return {std::nullopt, {}, "judge reply is not {\"verdict\": ...}"};
    }
    auto v = j["verdict"].get<std::string>();
    std::string rationale = j.contains("rationale") && j["rationale"].is_string() ? j["rationale"].get<std::string>() : v;
    if (v == "CORRECT") return {true, rationale, {}};
    if (v == "INCORRECT") return {false, rationale, {}};
    return {std::nullopt, {}, "judge verdict must be CORRECT or INCORRECT, got '" + v + "'"};
  }

  HttpJudgeConfig cfg_;
  std::string base_;
  std::string path_;
  std::counting_semaphore<> inflight_;
  std::atomic<std::size_t> sent_{0};
  std::shared_mutex cache_mu_;
  std::map<JudgeQuery, LlmReply> cache_;
};

}  // namespace tabrl
