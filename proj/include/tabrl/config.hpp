#pragma once

// Engine configuration: a TOML-style file (sections, scalars, single-line flat
// arrays) plus environment overrides.
//
//   TABRL_<SECTION>_<KEY>=value   overrides [section] key
//   JUDGE_URL, JUDGE_TOKEN        set judge.url and judge.token
//   TABRL_CONFIG                  path of the config file (read by the CLI)

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <type_traits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tabrl/codesim/codebleu.hpp"
#include "tabrl/detail/parallel.hpp"
#include "tabrl/detail/strings.hpp"
#include "tabrl/extraction.hpp"
#include "tabrl/judge.hpp"
#include "tabrl/judge_http.hpp"
#include "tabrl/rewards.hpp"
#include "tabrl/rlmath.hpp"
#include "tabrl/sandbox.hpp"

extern char** environ;

namespace tabrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class TomlReader {
 public:
  explicit TomlReader(std::string_view text) : text_(text) {}

  nlohmann::json document() {
    nlohmann::json doc = nlohmann::json::object();
    nlohmann::json* table = &doc;
    std::size_t lineno = 0;
    for (auto raw : split_lines(text_)) {
      ++lineno;
      line_ = lineno;
      s_ = raw;
      pos_ = 0;
      skip_ws();
      if (at_end_or_comment()) continue;
      if (s_[pos_] == '[') {
        ++pos_;
        skip_ws();
        auto name = bare_key();
        skip_ws();
        expect(']');
        expect_eol();
        if (doc.contains(name)) fail("duplicate section [" + name + "]");
        doc[name] = nlohmann::json::object();
        table = &doc[name];
        continue;
      }
      auto key = bare_key();
      skip_ws();
      expect('=');
      skip_ws();
      auto v = value();
      expect_eol();
      if (table->contains(key)) fail("duplicate key " + key);
      (*table)[key] = std::move(v);
    }
    return doc;
  }

  /// A single value occupying the whole string, e.g. an environment override.
  static std::optional<nlohmann::json> parse_value(std::string_view text) {
    TomlReader r(text);
    r.s_ = trim(text);
    try {
      auto v = r.value();
      r.expect_eol();
      return v;
    } catch (const ConfigError&) {
      return std::nullopt;
    }
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
  }
  bool at_end_or_comment() const { return pos_ >= s_.size() || s_[pos_] == '#'; }
  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void expect_eol() {
    skip_ws();
    if (!at_end_or_comment()) fail("unexpected trailing characters");
  }

  std::string bare_key() {
    auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                s_[pos_] == '-')) {
      ++pos_;
    }
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  nlohmann::json value() {
    if (pos_ >= s_.size()) fail("missing value");
    char c = s_[pos_];
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return number();
  }

  std::string basic_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= s_.size()) fail("unterminated escape");
      switch (char e = s_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    expect('"');
    return out;
  }

  std::string literal_string() {
    ++pos_;
    auto end = s_.find('\'', pos_);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  nlohmann::json array() {
    ++pos_;
    nlohmann::json out = nlohmann::json::array();
    for (;;) {
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      auto v = value();
      if (v.is_array()) fail("nested arrays are not supported");
      out.push_back(std::move(v));
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      expect(']');
      return out;
    }
  }

  nlohmann::json number() {
    auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '+' ||
                                s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == '_')) {
      ++pos_;
    }
    std::string tok;
    for (char c : s_.substr(start, pos_ - start)) {
      if (c != '_') tok += c;
    }
    if (tok.empty()) fail("expected a value");
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* e = tok.data() + tok.size();
    if (tok.find_first_of(".eE") == std::string::npos) {
      std::int64_t i = 0;
      auto [p, ec] = std::from_chars(b, e, i);
      if (ec == std::errc{} && p == e) return i;
    } else {
      double d = 0;
      auto [p, ec] = std::from_chars(b, e, d);
      if (ec == std::errc{} && p == e) return d;
    }
    fail("invalid value '" + tok + "'");
  }

  std::string_view text_;
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

}  // namespace detail

inline nlohmann::json parse_toml(std::string_view text) { return detail::TomlReader(text).document(); }

struct SandboxSettings {
  /// "subprocess" or "scripted".
  std::string executor = "subprocess";
  std::vector<std::string> runner{"tabrl-runner"};
  std::filesystem::path scripted_outcomes;
  std::filesystem::path scratch_root;
  ExecLimits limits;
  std::size_t max_concurrent = detail::hardware_workers();
};

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t threads = 8;
};

struct EngineConfig {
  std::filesystem::path dataset;
  SandboxSettings sandbox;
  JudgeConfig judge;
  HttpJudgeConfig judge_http;
  RewardConfig rewards;
  ClipConfig clip;
  codesim::CodeSimConfig codesim;
  std::filesystem::path keywords_file;
  ExtractionConfig extraction;
  ServiceSettings service;
  std::size_t workers = detail::hardware_workers();

  void validate() const {
    auto wrap = [](const char* section, auto&& fn) {
      try {
        fn();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
      }
    };
    if (sandbox.executor != "subprocess" && sandbox.executor != "scripted") {
      throw ConfigError("sandbox.executor must be \"subprocess\" or \"scripted\"");
    }
    if (sandbox.executor == "scripted" && sandbox.scripted_outcomes.empty()) {
      throw ConfigError("sandbox.scripted_outcomes is required for the scripted executor");
    }
    if (sandbox.executor == "subprocess" && sandbox.runner.empty()) throw ConfigError("sandbox.runner is empty");
    if (sandbox.max_concurrent == 0) throw ConfigError("sandbox.max_concurrent must be >= 1");
    wrap("sandbox", [&] { sandbox.limits.validate(); });
    wrap("judge", [&] { judge.validate(); });
    if (judge_http.max_inflight == 0) throw ConfigError("judge.max_inflight must be >= 1");
    if (judge_http.max_retries < 0) throw ConfigError("judge.max_retries must be >= 0");
    wrap("rewards", [&] { rewards.validate(); });
    wrap("clip", [&] { clip.validate(); });
    wrap("codesim", [&] { codesim.weights.validate(); });
    if (!(codesim.keyword_weight >= 0)) throw ConfigError("codesim.keyword_weight must be >= 0");
    if (codesim.max_n == 0) throw ConfigError("codesim.max_n must be >= 1");
    if (extraction.read_calls.empty()) throw ConfigError("extraction.read_calls is empty");
    if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
    if (service.threads == 0) throw ConfigError("service.threads must be >= 1");
    if (workers == 0) throw ConfigError("engine.workers must be >= 1");
  }

  /// Effective configuration with secrets masked.
  nlohmann::json redacted() const {
    auto levels = nlohmann::json::array();
    for (double l : rewards.piecewise_levels) levels.push_back(l);
    return {
        {"dataset", {{"path", dataset.string()}}},
        {"sandbox",
         {{"executor", sandbox.executor},
          {"runner", sandbox.runner},
          {"scripted_outcomes", sandbox.scripted_outcomes.string()},
          {"wall_timeout_s", sandbox.limits.wall_timeout.count()},
          {"max_stdout", sandbox.limits.max_stdout},
          {"max_memory", sandbox.limits.max_memory},
          {"network_allowed", sandbox.limits.network_allowed},
          {"max_concurrent", sandbox.max_concurrent}}},
        {"judge",
         {{"relative_tolerance", judge.relative_tolerance},
          {"use_llm_judge", judge.use_llm_judge},
          {"url", judge_http.url},
          {"token", judge_http.token.empty() ? "" : "***"},
          {"cache_enabled", judge.cache_enabled},
          {"max_inflight", judge_http.max_inflight},
          {"max_retries", judge_http.max_retries}}},
        {"rewards", {{"lambda1", rewards.lambda1}, {"lambda2", rewards.lambda2}, {"piecewise_levels", levels}}},
        {"clip", {{"eps_low", clip.eps_low}, {"eps_high", clip.eps_high}, {"sigma_floor", clip.sigma_floor}}},
        {"codesim",
         {{"weights",
           {codesim.weights.ngram, codesim.weights.weighted, codesim.weights.syntax, codesim.weights.dataflow}},
          {"keyword_weight", codesim.keyword_weight},
          {"keywords_file", keywords_file.string()},
          {"max_n", codesim.max_n}}},
        {"extraction", {{"read_calls", extraction.read_calls}}},
        {"service", {{"host", service.host}, {"port", service.port}, {"threads", service.threads}}},
        {"engine", {{"workers", workers}}},
    };
  }
};

inline const std::set<std::string>& config_sections() {
  static const std::set<std::string> s{"dataset", "sandbox", "judge",   "rewards", "clip",
                                       "codesim", "extraction", "service", "engine"};
  return s;
}

namespace detail {

class SectionBinder {
 public:
  SectionBinder(const nlohmann::json& doc, std::string name) : name_(std::move(name)) {
    if (auto it = doc.find(name_); it != doc.end()) {
      if (!it->is_object()) throw ConfigError("[" + name_ + "] must be a section");
      section_ = &*it;
    }
  }

  /// Rejects keys nobody asked for.
  void finish() const {
    if (!section_) return;
    for (const auto& [k, v] : section_->items()) {
      if (!used_.contains(k)) throw ConfigError("unknown config key " + name_ + "." + k);
    }
  }

  template <typename Fn>
  void with(const char* key, Fn&& fn) {
    if (!section_) return;
    auto it = section_->find(key);
    if (it == section_->end()) return;
    used_.insert(key);
    try {
      fn(*it);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  void number(const char* key, double& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_number()) type_error(key, "a number");
      out = v.get<double>();
    });
  }
  template <typename Int>
  void integer(const char* key, Int& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_number_integer()) type_error(key, "an integer");
      if (v.get<std::int64_t>() < 0 && std::is_unsigned_v<Int>) type_error(key, "a non-negative integer");
      out = static_cast<Int>(v.get<std::int64_t>());
    });
  }
  void boolean(const char* key, bool& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_boolean()) type_error(key, "true or false");
      out = v.get<bool>();
    });
  }
  void string(const char* key, std::string& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_string()) type_error(key, "a string");
      out = v.get<std::string>();
    });
  }
  void path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string s;
    string(key, s);
    if (!s.empty()) out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
  }
  void strings(const char* key, std::vector<std::string>& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_array()) type_error(key, "an array of strings");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_string()) type_error(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    });
  }
  template <std::size_t N>
  void numbers(const char* key, std::array<double, N>& out) {
    with(key, [&](const nlohmann::json& v) {
      if (!v.is_array() || v.size() != N) type_error(key, "an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        if (!v[i].is_number()) type_error(key, "an array of " + std::to_string(N) + " numbers");
        out[i] = v[i].get<double>();
      }
    });
  }

 private:
  [[noreturn]] void type_error(const char* key, const std::string& want) const {
    throw ConfigError(name_ + "." + key + " must be " + want);
  }

  std::string name_;
  const nlohmann::json* section_ = nullptr;
  std::set<std::string> used_;
};

}  // namespace detail

/// Relative paths are resolved against base_dir. Throws ConfigError on unknown
/// keys, wrong types or invalid values.
inline EngineConfig bind_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  if (!doc.is_object()) throw ConfigError("config root must be a table");
  for (const auto& [k, v] : doc.items()) {
    if (!config_sections().contains(k)) throw ConfigError("unknown config section [" + k + "]");
  }
  EngineConfig c;
  {
    detail::SectionBinder b(doc, "dataset");
    b.path("path", c.dataset, base_dir);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "sandbox");
    b.string("executor", c.sandbox.executor);
    b.strings("runner", c.sandbox.runner);
    b.path("scripted_outcomes", c.sandbox.scripted_outcomes, base_dir);
    b.path("scratch_root", c.sandbox.scratch_root, base_dir);
    double timeout = c.sandbox.limits.wall_timeout.count();
    b.number("wall_timeout_s", timeout);
    c.sandbox.limits.wall_timeout = std::chrono::duration<double>(timeout);
    b.integer("max_stdout", c.sandbox.limits.max_stdout);
    b.integer("max_memory", c.sandbox.limits.max_memory);
    b.boolean("network_allowed", c.sandbox.limits.network_allowed);
    b.integer("max_concurrent", c.sandbox.max_concurrent);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "judge");
    b.number("relative_tolerance", c.judge.relative_tolerance);
    b.boolean("use_llm_judge", c.judge.use_llm_judge);
    b.string("url", c.judge_http.url);
    b.string("token", c.judge_http.token);
    b.boolean("cache_enabled", c.judge.cache_enabled);
    b.integer("max_inflight", c.judge_http.max_inflight);
    b.integer("max_retries", c.judge_http.max_retries);
    std::int64_t backoff = c.judge_http.initial_backoff.count();
    b.integer("initial_backoff_ms", backoff);
    c.judge_http.initial_backoff = std::chrono::milliseconds(backoff);
    std::int64_t timeout = c.judge_http.timeout.count();
    b.integer("timeout_s", timeout);
    c.judge_http.timeout = std::chrono::seconds(timeout);
    c.judge.llm_endpoint = c.judge_http.url;
    c.judge_http.cache_enabled = c.judge.cache_enabled;
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "rewards");
    b.number("lambda1", c.rewards.lambda1);
    b.number("lambda2", c.rewards.lambda2);
    b.numbers("piecewise_levels", c.rewards.piecewise_levels);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "clip");
    b.number("eps_low", c.clip.eps_low);
    b.number("eps_high", c.clip.eps_high);
    b.number("sigma_floor", c.clip.sigma_floor);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "codesim");
    std::array<double, 4> w{c.codesim.weights.ngram, c.codesim.weights.weighted, c.codesim.weights.syntax,
                            c.codesim.weights.dataflow};
    b.numbers("weights", w);
    c.codesim.weights = {w[0], w[1], w[2], w[3]};
    b.number("keyword_weight", c.codesim.keyword_weight);
    b.integer("max_n", c.codesim.max_n);
    b.path("keywords_file", c.keywords_file, base_dir);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "extraction");
    b.strings("read_calls", c.extraction.read_calls);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "service");
    b.string("host", c.service.host);
    b.integer("port", c.service.port);
    b.integer("threads", c.service.threads);
    b.finish();
  }
  {
    detail::SectionBinder b(doc, "engine");
    b.integer("workers", c.workers);
    b.finish();
  }
  c.validate();
  if (!c.keywords_file.empty()) c.codesim.keywords = codesim::load_keywords(c.keywords_file);
  return c;
}

using Environment = std::map<std::string, std::string>;

inline Environment current_environment() {
  Environment env;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    auto eq = kv.find('=');
    if (eq != std::string_view::npos) env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

/// Writes environment overrides into a parsed document.
inline void apply_env_overrides(nlohmann::json& doc, const Environment& env) {
  auto set = [&](const std::string& section, const std::string& key, const std::string& raw, bool as_string) {
    if (!doc.contains(section)) doc[section] = nlohmann::json::object();
    if (as_string) {
      doc[section][key] = raw;
      return;
    }
    auto v = detail::TomlReader::parse_value(raw);
    doc[section][key] = v ? *v : nlohmann::json(raw);
  };
  if (auto it = env.find("JUDGE_URL"); it != env.end()) set("judge", "url", it->second, true);
  if (auto it = env.find("JUDGE_TOKEN"); it != env.end()) set("judge", "token", it->second, true);
  constexpr std::string_view prefix = "TABRL_";
  for (const auto& [name, value] : env) {
    if (!detail::starts_with(name, prefix) || name == "TABRL_CONFIG") continue;
    auto rest = detail::ascii_lower(std::string_view(name).substr(prefix.size()));
    bool matched = false;
    for (const auto& section : config_sections()) {
      if (rest.size() > section.size() + 1 && detail::starts_with(rest, section) && rest[section.size()] == '_') {
        set(section, rest.substr(section.size() + 1), value, false);
        matched = true;
        break;
      }
    }
    if (!matched) spdlog::warn("ignoring environment variable {}: no such config section", name);
  }
}

/// Reads the file (if any), applies overrides from env, binds and validates.
inline EngineConfig load_config(const std::filesystem::path& file, const Environment& env) {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base = std::filesystem::current_path();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    doc = parse_toml(ss.str());
    base = std::filesystem::absolute(file).parent_path();
  }
  apply_env_overrides(doc, env);
  return bind_config(doc, base);
}

}  // namespace tabrl
