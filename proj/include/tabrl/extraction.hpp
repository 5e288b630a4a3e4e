#pragma once

// Code and table-path extraction from free-text model responses.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tabrl/detail/strings.hpp"

namespace tabrl {

inline constexpr std::string_view kOpeningFence = "```python";
inline constexpr std::string_view kClosingFence = "```";

/// The body of one fenced code block inside a response.
struct CodeCandidate {
  std::string source;
  /// [first, second) byte offsets of the whole block, opening tag through closing fence.
  std::pair<std::size_t, std::size_t> fence_span{0, 0};
  std::size_t block_index = 0;

  friend bool operator==(const CodeCandidate&, const CodeCandidate&) = default;
};

/// Set of normalized, "/"-separated relative table paths.
using PathSet = std::set<std::string>;

struct ExtractionConfig {
  std::vector<std::string> read_calls{"pd.read_csv", "read_csv"};
};

namespace detail {

inline bool at_line_start(std::string_view text, std::size_t pos) {
  return pos == 0 || text[pos - 1] == '\n';
}

// A closing fence is "```" at the start of a line, followed only by
// optional spaces/tabs/CR before the newline or end of input.
inline bool is_closing_line(std::string_view text, std::size_t pos) {
  if (text.substr(pos, kClosingFence.size()) != kClosingFence) return false;
  for (auto i = pos + kClosingFence.size(); i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

inline bool is_opening_line(std::string_view text, std::size_t pos) {
  return text.substr(pos, kOpeningFence.size()) == kOpeningFence &&
         pos + kOpeningFence.size() < text.size() && text[pos + kOpeningFence.size()] == '\n';
}

}  // namespace detail

/// Returns every complete fenced block in order of appearance. Blocks whose
/// body is blank are included; callers decide how to treat them.
inline std::vector<CodeCandidate> extract_code_blocks(std::string_view response) {
  std::vector<CodeCandidate> blocks;
  std::size_t pos = 0;
  while (pos < response.size()) {
    if (detail::is_opening_line(response, pos)) {
      const std::size_t open = pos;
      const std::size_t body = pos + kOpeningFence.size() + 1;
      std::size_t line = body;
      std::optional<std::size_t> close;
      while (line < response.size()) {
        if (detail::is_closing_line(response, line)) {
          close = line;
          break;
        }
        auto nl = response.find('\n', line);
        if (nl == std::string_view::npos) break;
        line = nl + 1;
      }
      // An unterminated opening fence swallows the rest of the response.
      if (!close) break;
      CodeCandidate block;
      // The body always ends with the newline preceding the closing fence,
      // except for the degenerate "```python\n```" block.
      block.source = *close > body ? std::string(response.substr(body, *close - 1 - body)) : std::string();
      block.fence_span = {open, *close + kClosingFence.size()};
      block.block_index = blocks.size();
      blocks.push_back(std::move(block));
      pos = *close + kClosingFence.size();
      auto nl = response.find('\n', pos);
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
      continue;
    }
    auto nl = response.find('\n', pos);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return blocks;
}

/// First complete fenced block; absent when none exists or the first block is blank.
inline std::optional<CodeCandidate> extract_code(std::string_view response) {
  auto blocks = extract_code_blocks(response);
  if (blocks.empty() || detail::is_blank(blocks.front().source)) return std::nullopt;
  return std::move(blocks.front());
}

/// Re-wraps a candidate's source in fences; equals the response bytes over fence_span.
inline std::string rewrap(const CodeCandidate& code) {
  std::string out(kOpeningFence);
  out += '\n';
  out += code.source;
  out += '\n';
  out += kClosingFence;
  return out;
}

/// Lexical path normalization: backslashes become "/", "." segments and
/// repeated separators collapse. Returns empty for an empty path.
inline std::string normalize_table_path(std::string_view raw) {
  std::string s(detail::trim(raw));
  for (auto& c : s) {
    if (c == '\\') c = '/';
  }
  if (s.empty()) return {};
  auto normal = std::filesystem::path(s).lexically_normal().generic_string();
  if (normal == ".") return {};
  return normal;
}

namespace detail {

inline bool is_ident_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || u >= 0x80;
}

// Parses a single-line string literal starting at `pos`. Accepts r/u prefixes
// only; f-strings and byte strings are not plain path literals.
inline std::optional<std::pair<std::string_view, std::size_t>> parse_path_literal(std::string_view code,
                                                                                  std::size_t pos) {
  while (pos < code.size() && (code[pos] == 'r' || code[pos] == 'R' || code[pos] == 'u' || code[pos] == 'U')) ++pos;
  if (pos >= code.size() || (code[pos] != '"' && code[pos] != '\'')) return std::nullopt;
  const char quote = code[pos];
  const std::size_t start = pos + 1;
  for (auto i = start; i < code.size(); ++i) {
    if (code[i] == '\\') {
      ++i;
      continue;
    }
    if (code[i] == '\n') return std::nullopt;
    if (code[i] == quote) return std::pair{code.substr(start, i - start), i + 1};
  }
  return std::nullopt;
}

inline std::size_t skip_blanks(std::string_view code, std::size_t pos) {
  while (pos < code.size() && (code[pos] == ' ' || code[pos] == '\t' || code[pos] == '\n' || code[pos] == '\r')) ++pos;
  return pos;
}

}  // namespace detail

/// Raw (un-normalized) literal first arguments of every configured read call.
inline std::vector<std::string> extract_table_path_literals(std::string_view code,
                                                            const ExtractionConfig& cfg = {}) {
  std::vector<std::string> literals;
  for (const auto& call : cfg.read_calls) {
    if (call.empty()) continue;
    for (auto hit = code.find(call); hit != std::string_view::npos; hit = code.find(call, hit + 1)) {
      if (hit > 0 && detail::is_ident_char(code[hit - 1])) continue;
      auto pos = detail::skip_blanks(code, hit + call.size());
      if (pos >= code.size() || code[pos] != '(') continue;
      pos = detail::skip_blanks(code, pos + 1);
      auto literal = detail::parse_path_literal(code, pos);
      if (!literal) continue;
      // Concatenation, formatting or method calls on the literal disqualify it.
      auto after = detail::skip_blanks(code, literal->second);
      if (after >= code.size() || (code[after] != ',' && code[after] != ')')) continue;
      literals.emplace_back(literal->first);
    }
  }
  return literals;
}

inline PathSet extract_table_paths(std::string_view code, const ExtractionConfig& cfg = {}) {
  PathSet paths;
  for (const auto& raw : extract_table_path_literals(code, cfg)) {
    auto normal = normalize_table_path(raw);
    if (!normal.empty()) paths.insert(std::move(normal));
  }
  return paths;
}

inline PathSet extract_table_paths(const CodeCandidate& code, const ExtractionConfig& cfg = {}) {
  return extract_table_paths(std::string_view(code.source), cfg);
}

}  // namespace tabrl
