#pragma once

// Lexer for the dataframe-scripting subset of Python emitted by rollouts.
// Total: unknown bytes become single-byte punctuation tokens.

#include <array>
#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tabrl::codesim {

enum class TokenKind { identifier, keyword, number, string, op, punctuation };

inline std::string_view to_string(TokenKind k) {
  switch (k) {
    case TokenKind::identifier: return "identifier";
    case TokenKind::keyword: return "keyword";
    case TokenKind::number: return "number";
    case TokenKind::string: return "string";
    case TokenKind::op: return "operator";
    case TokenKind::punctuation: return "punctuation";
  }
  return "punctuation";
}

struct Token {
  std::string lexeme;
  TokenKind kind = TokenKind::punctuation;
  std::size_t offset = 0;
  /// First token of a logical line (outside brackets, not after a backslash continuation).
  bool line_start = false;
  /// Indentation column of the logical line; meaningful when line_start.
  std::size_t indent = 0;
};

using TokenStream = std::vector<Token>;

inline const std::set<std::string, std::less<>>& python_keywords() {
  static const std::set<std::string, std::less<>> kw{
      "False", "None",   "True",    "and",      "as",       "assert", "async",  "await",
      "break", "class",  "continue", "def",     "del",      "elif",   "else",   "except",
      "finally", "for",  "from",    "global",   "if",       "import", "in",     "is",
      "lambda", "nonlocal", "not",  "or",       "pass",     "raise",  "return", "try",
      "while", "with",   "yield"};
  return kw;
}

namespace detail {

inline bool ident_start(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80; }
inline bool ident_char(unsigned char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
inline bool digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Longest-first operator table.
inline constexpr std::array<std::string_view, 47> kOperators{
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "==", "!=", "<=", ">=", "<<", ">>", "+=",
    "-=",  "*=",  "/=",  "%=",  "&=",  "|=", "^=", "@=", "+",  "-",  "*",  "/",  "%",  "@",  "<",  ">",
    "=",   "&",   "|",   "^",   "~",   "(",  ")",  "[",  "]",  "{",  "}",  ",",  ":",  ".",  ";"};

inline bool is_punctuation_lexeme(std::string_view s) {
  return s == "(" || s == ")" || s == "[" || s == "]" || s == "{" || s == "}" || s == "," || s == ":" ||
         s == "." || s == ";" || s == "...";
}

inline bool is_string_prefix(std::string_view s) {
  static constexpr std::array<std::string_view, 14> prefixes{"r", "u", "b", "f", "br", "rb", "fr", "rf",
                                                             "R", "U", "B", "F", "Rb", "bR"};
  for (auto p : prefixes) {
    if (s.size() == p.size()) {
      bool eq = true;
      for (std::size_t i = 0; i < s.size(); ++i) {
        char a = s[i] | 0x20, b = p[i] | 0x20;
        if (a != b) eq = false;
      }
      if (eq) return true;
    }
  }
  return false;
}

// Returns the end offset of a string literal whose opening quote is at `q`.
inline std::size_t scan_string(std::string_view src, std::size_t q) {
  const char quote = src[q];
  const bool triple = q + 2 < src.size() && src[q + 1] == quote && src[q + 2] == quote;
  std::size_t i = q + (triple ? 3 : 1);
  while (i < src.size()) {
    char c = src[i];
    if (c == '\\') {
      i += 2;
      continue;
    }
    if (triple) {
      if (c == quote && i + 2 < src.size() + 0 && src[i + 1] == quote && src[i + 2] == quote) return i + 3;
    } else {
      if (c == quote) return i + 1;
      if (c == '\n') return i;  // unterminated single-line literal
    }
    ++i;
  }
  return src.size();
}

inline std::size_t scan_number(std::string_view src, std::size_t i) {
  auto n = src.size();
  if (src[i] == '0' && i + 1 < n && std::string_view("xXoObB").find(src[i + 1]) != std::string_view::npos) {
    i += 2;
    while (i < n && (ident_char(static_cast<unsigned char>(src[i])))) ++i;
    return i;
  }
  while (i < n && (digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
  if (i < n && src[i] == '.') {
    ++i;
    while (i < n && (digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
  }
  if (i < n && (src[i] == 'e' || src[i] == 'E')) {
    auto j = i + 1;
    if (j < n && (src[j] == '+' || src[j] == '-')) ++j;
    if (j < n && digit(static_cast<unsigned char>(src[j]))) {
      i = j;
      while (i < n && digit(static_cast<unsigned char>(src[i]))) ++i;
    }
  }
  if (i < n && (src[i] == 'j' || src[i] == 'J')) ++i;
  return i;
}

}  // namespace detail

inline TokenStream tokenize(std::string_view src) {
  TokenStream tokens;
  std::size_t i = 0;
  const std::size_t n = src.size();
  int depth = 0;
  bool new_line = true;       // at the start of a physical line
  bool continuation = false;  // previous physical line ended with a backslash
  std::size_t column = 0;

  auto push = [&](std::size_t start, std::size_t end, TokenKind kind) {
    Token t;
    t.lexeme = std::string(src.substr(start, end - start));
    t.kind = kind;
    t.offset = start;
    if (new_line && depth == 0 && !continuation) {
      t.line_start = true;
      t.indent = column;
    }
    new_line = false;
    continuation = false;
    tokens.push_back(std::move(t));
  };

  while (i < n) {
    unsigned char c = static_cast<unsigned char>(src[i]);
    if (c == '\n') {
      new_line = true;
      column = 0;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
      if (new_line) column = c == '\t' ? (column / 8 + 1) * 8 : column + 1;
      ++i;
      continue;
    }
    if (c == '#') {
      while (i < n && src[i] != '\n') ++i;
      continue;
    }
    if (c == '\\' && i + 1 < n && (src[i + 1] == '\n' || (src[i + 1] == '\r' && i + 2 < n && src[i + 2] == '\n'))) {
      i += src[i + 1] == '\n' ? 2 : 3;
      // The next physical line continues the current logical line.
      continuation = true;
      new_line = true;
      column = 0;
      continue;
    }
    if (detail::ident_start(c)) {
      auto j = i;
      while (j < n && detail::ident_char(static_cast<unsigned char>(src[j]))) ++j;
      auto word = src.substr(i, j - i);
      if (j < n && (src[j] == '"' || src[j] == '\'') && detail::is_string_prefix(word)) {
        push(i, detail::scan_string(src, j), TokenKind::string);
        i = tokens.back().offset + tokens.back().lexeme.size();
        continue;
      }
      push(i, j, python_keywords().contains(word) ? TokenKind::keyword : TokenKind::identifier);
      i = j;
      continue;
    }
    if (detail::digit(c) || (c == '.' && i + 1 < n && detail::digit(static_cast<unsigned char>(src[i + 1])))) {
      auto j = detail::scan_number(src, i);
      push(i, j, TokenKind::number);
      i = j;
      continue;
    }
    if (c == '"' || c == '\'') {
      auto j = detail::scan_string(src, i);
      push(i, j, TokenKind::string);
      i = j;
      continue;
    }
    bool matched = false;
    for (auto op : detail::kOperators) {
      if (src.substr(i, op.size()) == op) {
        push(i, i + op.size(), detail::is_punctuation_lexeme(op) ? TokenKind::punctuation : TokenKind::op);
        if (op == "(" || op == "[" || op == "{") ++depth;
        if ((op == ")" || op == "]" || op == "}") && depth > 0) --depth;
        i += op.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    push(i, i + 1, TokenKind::punctuation);
    ++i;
  }
  return tokens;
}

}  // namespace tabrl::codesim
