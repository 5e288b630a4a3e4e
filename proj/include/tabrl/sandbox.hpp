#pragma once

// Execution contract shared by the real subprocess executor and test doubles.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

#include "tabrl/detail/strings.hpp"
#include "tabrl/extraction.hpp"

namespace tabrl {

struct ExecLimits {
  std::chrono::duration<double> wall_timeout{30.0};
  std::size_t max_stdout = 1 << 20;
  /// Applied as an address-space rlimit when non-zero; not a hard guarantee.
  std::size_t max_memory = 0;
  bool network_allowed = false;

  void validate() const {
    if (wall_timeout.count() <= 0) throw std::invalid_argument("wall_timeout must be positive");
    if (max_stdout == 0) throw std::invalid_argument("max_stdout must be positive");
  }
};

struct ExecOutcome {
  bool exit_ok = false;
  std::string stdout_text;
  std::string stderr_text;
  double wall_time = 0.0;
  bool timed_out = false;
  bool runner_protocol_error = false;
  bool stdout_truncated = false;

  friend bool operator==(const ExecOutcome&, const ExecOutcome&) = default;
};

struct ParsedAnswer {
  std::string text;
  std::size_t source_line_index = 0;
};

inline bool exec_success(const ExecOutcome& outcome) {
  return outcome.exit_ok && !outcome.timed_out && !outcome.runner_protocol_error &&
         !detail::is_blank(outcome.stdout_text);
}

/// Last non-empty stdout line, trimmed.
inline std::optional<ParsedAnswer> parse_answer(const ExecOutcome& outcome) {
  if (!exec_success(outcome)) return std::nullopt;
  auto lines = detail::split_lines(outcome.stdout_text);
  for (auto i = lines.size(); i-- > 0;) {
    auto t = detail::trim(lines[i]);
    if (!t.empty()) return ParsedAnswer{std::string(t), i};
  }
  return std::nullopt;
}

/// Anything that can run a candidate against a table workspace.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual ExecOutcome execute(const CodeCandidate& code, const std::filesystem::path& workspace,
                              const ExecLimits& limits) = 0;
};

/// Returns canned outcomes keyed by exact code source. Unknown code yields a
/// runner protocol error, which downstream stages treat as execution failure.
/// Never spawns a process.
class ScriptedExecutor final : public Executor {
 public:
  ScriptedExecutor() = default;
  explicit ScriptedExecutor(std::map<std::string, ExecOutcome> outcomes) : outcomes_(std::move(outcomes)) {}

  void add(std::string source, ExecOutcome outcome) {
    std::lock_guard lock(mu_);
    outcomes_[std::move(source)] = std::move(outcome);
  }

  ExecOutcome execute(const CodeCandidate& code, const std::filesystem::path&, const ExecLimits& limits) override {
    calls_.fetch_add(1);
    std::lock_guard lock(mu_);
    auto it = outcomes_.find(code.source);
    if (it == outcomes_.end()) {
      ExecOutcome miss;
      miss.runner_protocol_error = true;
      miss.stderr_text = "scripted executor: no outcome registered for this code";
      return miss;
    }
    ExecOutcome out = it->second;
    if (out.stdout_text.size() > limits.max_stdout) {
      out.stdout_text.resize(limits.max_stdout);
      out.stdout_truncated = true;
    }
    return out;
  }

  std::size_t calls() const { return calls_.load(); }

  /// JSONL, one object per line:
  /// {"code": str, "exit_ok": bool, "stdout": str, "stderr": str?, "timed_out": bool?}
  static std::map<std::string, ExecOutcome> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scripted outcomes file " + path.string());
    std::map<std::string, ExecOutcome> outcomes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::is_blank(line)) continue;
      try {
        auto j = nlohmann::json::parse(line);
        ExecOutcome o;
        o.exit_ok = j.at("exit_ok").get<bool>();
        o.stdout_text = j.value("stdout", "");
        o.stderr_text = j.value("stderr", "");
        o.timed_out = j.value("timed_out", false);
        o.wall_time = j.value("wall_time", 0.0);
        outcomes[j.at("code").get<std::string>()] = std::move(o);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return outcomes;
  }

 private:
  std::mutex mu_;
  std::map<std::string, ExecOutcome> outcomes_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace tabrl
