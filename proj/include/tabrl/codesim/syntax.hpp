#pragma once

// Recursive-descent parser for the Python subset used by dataframe scripts:
// assignments, calls, attribute/index access, conditionals, loops, try/with
// blocks, function definitions, comprehensions and literals. Node kinds
// follow tree-sitter-python naming; only named nodes are kept.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tabrl/codesim/tokenizer.hpp"

namespace tabrl::codesim {

struct SyntaxNode {
  std::string kind;
  /// Source text for identifier leaves; empty otherwise.
  std::string text;
  std::vector<SyntaxNode> children;
};

struct SyntaxTree {
  bool parse_ok = false;
  /// Meaningful only when parse_ok; kind is empty on failure.
  SyntaxNode root;
};

inline constexpr std::size_t kMaxParseDepth = 200;

namespace detail {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Parser {
 public:
  explicit Parser(const TokenStream& tokens) : toks_(tokens) {}

  SyntaxNode parse_module() {
    SyntaxNode module{"module", {}, {}};
    while (!eof()) {
      if (!peek().line_start || peek().indent != 0) fail("unexpected indent");
      parse_statement(0, module.children);
    }
    return module;
  }

 private:
  // ---- token helpers -------------------------------------------------------

  bool eof() const { return pos_ >= toks_.size(); }
  const Token& peek(std::size_t ahead = 0) const {
    static const Token sentinel{};
    return pos_ + ahead < toks_.size() ? toks_[pos_ + ahead] : sentinel;
  }
  bool at(std::string_view lexeme, std::size_t ahead = 0) const {
    if (pos_ + ahead >= toks_.size()) return false;
    const auto& t = toks_[pos_ + ahead];
    // Keywords/operators only; never match the contents of a string token.
    return t.kind != TokenKind::string && t.lexeme == lexeme;
  }
  bool at_line_end() const { return eof() || peek().line_start; }
  // True when the current token can continue the expression on this logical line.
  bool on_line() const { return !eof() && (pos_ == stmt_start_ || !peek().line_start); }
  bool at_on_line(std::string_view lexeme) const { return on_line() && at(lexeme); }

  const Token& advance() {
    if (eof()) fail("unexpected end of input");
    return toks_[pos_++];
  }
  void expect(std::string_view lexeme) {
    if (!at_on_line(lexeme)) fail("expected '" + std::string(lexeme) + "'");
    ++pos_;
  }
  bool accept(std::string_view lexeme) {
    if (!at_on_line(lexeme)) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] static void fail(const std::string& why) { throw ParseError(why); }

  struct DepthGuard {
    std::size_t& depth;
    explicit DepthGuard(std::size_t& d) : depth(d) {
      if (++depth > kMaxParseDepth) fail("nesting too deep");
    }
    ~DepthGuard() { --depth; }
  };

  static SyntaxNode node(std::string kind, std::vector<SyntaxNode> children = {}) {
    return SyntaxNode{std::move(kind), {}, std::move(children)};
  }

  SyntaxNode identifier() {
    if (!on_line() || peek().kind != TokenKind::identifier) fail("expected identifier");
    return SyntaxNode{"identifier", advance().lexeme, {}};
  }

  // ---- statements ----------------------------------------------------------

  void parse_statement(std::size_t indent, std::vector<SyntaxNode>& out) {
    DepthGuard guard(depth_);
    stmt_start_ = pos_;
    const auto& t = peek();
    if (t.kind == TokenKind::keyword) {
      if (t.lexeme == "if") return out.push_back(parse_if(indent));
      if (t.lexeme == "while") return out.push_back(parse_while(indent));
      if (t.lexeme == "for") return out.push_back(parse_for(indent));
      if (t.lexeme == "try") return out.push_back(parse_try(indent));
      if (t.lexeme == "with") return out.push_back(parse_with(indent));
      if (t.lexeme == "def") return out.push_back(parse_def(indent));
      if (t.lexeme == "class") return out.push_back(parse_class(indent));
      if (t.lexeme == "async" && (at("def", 1) || at("for", 1) || at("with", 1))) {
        ++pos_;
        return parse_statement(indent, out);
      }
    }
    if (at("@")) return out.push_back(parse_decorated(indent));
    parse_simple_statements(out);
  }

  void parse_simple_statements(std::vector<SyntaxNode>& out) {
    out.push_back(parse_small_statement());
    while (accept(";")) {
      if (at_line_end()) break;
      out.push_back(parse_small_statement());
    }
    if (!at_line_end()) fail("expected end of statement");
  }

  SyntaxNode parse_small_statement() {
    const auto& t = peek();
    if (t.kind == TokenKind::keyword) {
      const auto& kw = t.lexeme;
      if (kw == "pass") return ++pos_, node("pass_statement");
      if (kw == "break") return ++pos_, node("break_statement");
      if (kw == "continue") return ++pos_, node("continue_statement");
      if (kw == "return") {
        ++pos_;
        auto n = node("return_statement");
        if (on_line() && !at(";")) n.children.push_back(parse_expression_list());
        return n;
      }
      if (kw == "raise") {
        ++pos_;
        auto n = node("raise_statement");
        if (on_line() && !at(";")) {
          n.children.push_back(parse_expression());
          if (accept("from")) n.children.push_back(parse_expression());
        }
        return n;
      }
      if (kw == "del") {
        ++pos_;
        return node("delete_statement", {parse_expression_list()});
      }
      if (kw == "global" || kw == "nonlocal") {
        ++pos_;
        auto n = node(kw == "global" ? "global_statement" : "nonlocal_statement");
        n.children.push_back(identifier());
        while (accept(",")) n.children.push_back(identifier());
        return n;
      }
      if (kw == "assert") {
        ++pos_;
        auto n = node("assert_statement", {parse_expression()});
        if (accept(",")) n.children.push_back(parse_expression());
        return n;
      }
      if (kw == "import") return parse_import();
      if (kw == "from") return parse_from_import();
    }
    return parse_expression_statement();
  }

  SyntaxNode dotted_name() {
    auto n = node("dotted_name", {identifier()});
    while (at_on_line(".") && peek(1).kind == TokenKind::identifier) {
      ++pos_;
      n.children.push_back(identifier());
    }
    return n;
  }

  SyntaxNode maybe_aliased(SyntaxNode name) {
    if (accept("as")) return node("aliased_import", {std::move(name), identifier()});
    return name;
  }

  SyntaxNode parse_import() {
    expect("import");
    auto n = node("import_statement");
    n.children.push_back(maybe_aliased(dotted_name()));
    while (accept(",")) n.children.push_back(maybe_aliased(dotted_name()));
    return n;
  }

  SyntaxNode parse_from_import() {
    expect("from");
    auto n = node("import_from_statement");
    std::size_t dots = 0;
    while (at_on_line(".") || at_on_line("...")) dots += advance().lexeme.size();
    if (dots > 0) {
      auto rel = node("relative_import", {node("import_prefix")});
      if (!at_on_line("import")) rel.children.push_back(dotted_name());
      n.children.push_back(std::move(rel));
    } else {
      n.children.push_back(dotted_name());
    }
    expect("import");
    if (accept("*")) {
      n.children.push_back(node("wildcard_import"));
      return n;
    }
    bool paren = accept("(");
    n.children.push_back(maybe_aliased(dotted_name()));
    while (accept(",")) {
      if (paren && at_on_line(")")) break;
      n.children.push_back(maybe_aliased(dotted_name()));
    }
    if (paren) expect(")");
    return n;
  }

  static bool is_augmented_op(std::string_view s) {
    return s == "+=" || s == "-=" || s == "*=" || s == "/=" || s == "//=" || s == "%=" || s == "**=" ||
           s == ">>=" || s == "<<=" || s == "&=" || s == "|=" || s == "^=" || s == "@=";
  }

  SyntaxNode parse_expression_statement() {
    if (at("yield")) return node("expression_statement", {parse_yield()});
    auto first = parse_star_expression_list();
    if (on_line() && peek().kind == TokenKind::op && is_augmented_op(peek().lexeme)) {
      ++pos_;
      auto value = at("yield") ? parse_yield() : parse_expression_list();
      return node("augmented_assignment", {std::move(first), std::move(value)});
    }
    if (at_on_line(":")) {
      ++pos_;
      auto n = node("assignment", {std::move(first), node("type", {parse_expression()})});
      if (accept("=")) n.children.push_back(at("yield") ? parse_yield() : parse_star_expression_list());
      return n;
    }
    if (at_on_line("=")) {
      auto n = node("assignment", {std::move(first)});
      while (accept("=")) n.children.push_back(at("yield") ? parse_yield() : parse_star_expression_list());
      return n;
    }
    return node("expression_statement", {std::move(first)});
  }

  SyntaxNode parse_yield() {
    expect("yield");
    auto n = node("yield");
    if (accept("from")) {
      n.children.push_back(parse_expression());
    } else if (on_line() && !at(")") && !at(";") && !at("=")) {
      n.children.push_back(parse_expression_list());
    }
    return n;
  }

  SyntaxNode parse_block(std::size_t parent_indent) {
    expect(":");
    auto block = node("block");
    if (!at_line_end()) {
      parse_simple_statements(block.children);
      return block;
    }
    if (eof()) fail("expected indented block");
    const std::size_t indent = peek().indent;
    if (indent <= parent_indent) fail("expected indented block");
    while (!eof() && peek().line_start && peek().indent == indent) parse_statement(indent, block.children);
    if (!eof() && peek().indent > indent) fail("unexpected indent");
    return block;
  }

  // Continuation clauses (elif/else/except/finally) sit on their own line at
  // the parent's indentation.
  bool at_clause(std::string_view kw, std::size_t indent) const {
    return !eof() && peek().line_start && peek().indent == indent && at(kw);
  }

  SyntaxNode parse_if(std::size_t indent) {
    expect("if");
    auto n = node("if_statement", {parse_named_expression()});
    n.children.push_back(parse_block(indent));
    while (at_clause("elif", indent)) {
      ++pos_;
      auto clause = node("elif_clause", {parse_named_expression()});
      clause.children.push_back(parse_block(indent));
      n.children.push_back(std::move(clause));
    }
    if (at_clause("else", indent)) {
      ++pos_;
      n.children.push_back(node("else_clause", {parse_block(indent)}));
    }
    return n;
  }

  SyntaxNode parse_while(std::size_t indent) {
    expect("while");
    auto n = node("while_statement", {parse_named_expression()});
    n.children.push_back(parse_block(indent));
    if (at_clause("else", indent)) {
      ++pos_;
      n.children.push_back(node("else_clause", {parse_block(indent)}));
    }
    return n;
  }

  SyntaxNode parse_for(std::size_t indent) {
    expect("for");
    auto n = node("for_statement", {parse_target_list()});
    expect("in");
    n.children.push_back(parse_expression_list());
    n.children.push_back(parse_block(indent));
    if (at_clause("else", indent)) {
      ++pos_;
      n.children.push_back(node("else_clause", {parse_block(indent)}));
    }
    return n;
  }

  SyntaxNode parse_try(std::size_t indent) {
    expect("try");
    auto n = node("try_statement", {parse_block(indent)});
    bool handlers = false;
    while (at_clause("except", indent)) {
      ++pos_;
      auto clause = node("except_clause");
      accept("*");
      if (!at_on_line(":")) {
        clause.children.push_back(parse_expression());
        if (accept("as")) {
          clause.children.push_back(identifier());
        } else if (accept(",")) {
          clause.children.push_back(parse_expression());
        }
      }
      clause.children.push_back(parse_block(indent));
      n.children.push_back(std::move(clause));
      handlers = true;
    }
    if (handlers && at_clause("else", indent)) {
      ++pos_;
      n.children.push_back(node("else_clause", {parse_block(indent)}));
    }
    bool final_clause = false;
    if (at_clause("finally", indent)) {
      ++pos_;
      n.children.push_back(node("finally_clause", {parse_block(indent)}));
      final_clause = true;
    }
    if (!handlers && !final_clause) fail("try without except or finally");
    return n;
  }

  SyntaxNode parse_with(std::size_t indent) {
    expect("with");
    auto clause = node("with_clause");
    bool paren = at_on_line("(") && with_items_parenthesized();
    if (paren) ++pos_;
    do {
      if (paren && at_on_line(")")) break;
      auto item = node("with_item", {parse_expression()});
      if (accept("as")) item.children.push_back(parse_target());
      clause.children.push_back(std::move(item));
    } while (accept(","));
    if (paren) expect(")");
    return node("with_statement", {std::move(clause), parse_block(indent)});
  }

  // Distinguishes `with (a as b, c):` from `with (expr).method():`.
  bool with_items_parenthesized() const {
    int depth = 0;
    for (std::size_t i = pos_; i < toks_.size(); ++i) {
      const auto& l = toks_[i].lexeme;
      if (toks_[i].kind == TokenKind::string) continue;
      if (l == "(" || l == "[" || l == "{") ++depth;
      if (l == ")" || l == "]" || l == "}") {
        if (--depth == 0) return i + 1 < toks_.size() && toks_[i + 1].lexeme == ":";
      }
      if (depth == 1 && l == "as") return true;
    }
    return false;
  }

  SyntaxNode parse_parameters(std::string_view closer) {
    auto params = node(closer == ")" ? "parameters" : "lambda_parameters");
    while (on_line() && !at(closer)) {
      if (accept("/")) {
        params.children.push_back(node("positional_separator"));
      } else if (accept("**")) {
        params.children.push_back(node("dictionary_splat_pattern", {identifier()}));
      } else if (accept("*")) {
        if (peek().kind == TokenKind::identifier && on_line()) {
          params.children.push_back(node("list_splat_pattern", {identifier()}));
        } else {
          params.children.push_back(node("keyword_separator"));
        }
      } else {
        auto name = identifier();
        if (closer == ")" && accept(":")) {
          auto typed = node("typed_parameter", {std::move(name), node("type", {parse_expression()})});
          if (accept("=")) {
            typed.kind = "typed_default_parameter";
            typed.children.push_back(parse_expression());
          }
          params.children.push_back(std::move(typed));
        } else if (accept("=")) {
          params.children.push_back(node("default_parameter", {std::move(name), parse_expression()}));
        } else {
          params.children.push_back(std::move(name));
        }
      }
      if (!accept(",")) break;
    }
    return params;
  }

  SyntaxNode parse_def(std::size_t indent) {
    expect("def");
    auto n = node("function_definition", {identifier()});
    expect("(");
    n.children.push_back(parse_parameters(")"));
    expect(")");
    if (accept("->")) n.children.push_back(node("type", {parse_expression()}));
    n.children.push_back(parse_block(indent));
    return n;
  }

  SyntaxNode parse_class(std::size_t indent) {
    expect("class");
    auto n = node("class_definition", {identifier()});
    if (at_on_line("(")) n.children.push_back(parse_arguments());
    n.children.push_back(parse_block(indent));
    return n;
  }

  SyntaxNode parse_decorated(std::size_t indent) {
    auto n = node("decorated_definition");
    while (!eof() && peek().line_start && peek().indent == indent && at("@")) {
      ++pos_;
      n.children.push_back(node("decorator", {parse_named_expression()}));
      if (!at_line_end()) fail("expected newline after decorator");
    }
    if (eof() || peek().indent != indent) fail("decorator without definition");
    stmt_start_ = pos_;
    if (at("async")) ++pos_;
    if (at("def")) {
      n.children.push_back(parse_def(indent));
    } else if (at("class")) {
      n.children.push_back(parse_class(indent));
    } else {
      fail("decorator without definition");
    }
    return n;
  }

  // ---- expressions ---------------------------------------------------------

  // Comma-separated expressions; a trailing or separating comma builds a tuple.
  SyntaxNode parse_list_of(SyntaxNode (Parser::*item)(), bool stop_at_in = false) {
    auto first = (this->*item)();
    if (!at_on_line(",")) return first;
    auto tuple = node("expression_list", {std::move(first)});
    while (accept(",")) {
      if (!on_line() || at("=") || at(")") || at(":") || at(";") || (stop_at_in && at("in")) ||
          (peek().kind == TokenKind::op && is_augmented_op(peek().lexeme))) {
        break;
      }
      tuple.children.push_back((this->*item)());
    }
    return tuple;
  }

  SyntaxNode parse_expression_list() { return parse_list_of(&Parser::parse_star_or_expression); }
  SyntaxNode parse_star_expression_list() { return parse_list_of(&Parser::parse_star_or_expression); }
  SyntaxNode parse_target_list() { return parse_list_of(&Parser::parse_target, true); }

  SyntaxNode parse_target() {
    if (accept("*")) return node("list_splat_pattern", {parse_bitor()});
    return parse_bitor();
  }

  SyntaxNode parse_star_or_expression() {
    if (accept("*")) return node("list_splat", {parse_bitor()});
    return parse_expression();
  }

  SyntaxNode parse_named_expression() {
    if (on_line() && peek().kind == TokenKind::identifier && at(":=", 1)) {
      auto name = identifier();
      ++pos_;
      return node("named_expression", {std::move(name), parse_expression()});
    }
    return parse_expression();
  }

  SyntaxNode parse_expression() {
    DepthGuard guard(depth_);
    if (at_on_line("lambda")) return parse_lambda();
    auto cond = parse_or();
    if (at_on_line("if")) {
      ++pos_;
      auto test = parse_or();
      expect("else");
      return node("conditional_expression", {std::move(cond), std::move(test), parse_expression()});
    }
    return cond;
  }

  SyntaxNode parse_lambda() {
    expect("lambda");
    auto n = node("lambda");
    if (!at_on_line(":")) n.children.push_back(parse_parameters(":"));
    expect(":");
    n.children.push_back(parse_expression());
    return n;
  }

  SyntaxNode parse_or() {
    auto left = parse_and();
    while (accept("or")) left = node("boolean_operator", {std::move(left), parse_and()});
    return left;
  }

  SyntaxNode parse_and() {
    auto left = parse_not();
    while (accept("and")) left = node("boolean_operator", {std::move(left), parse_not()});
    return left;
  }

  SyntaxNode parse_not() {
    DepthGuard guard(depth_);
    if (accept("not")) return node("not_operator", {parse_not()});
    return parse_comparison();
  }

  bool at_comparison_op() const {
    if (!on_line()) return false;
    if (at("<") || at(">") || at("==") || at(">=") || at("<=") || at("!=") || at("is")) return true;
    if (at("in")) return true;
    return at("not") && at("in", 1);
  }

  SyntaxNode parse_comparison() {
    auto first = parse_bitor();
    if (!at_comparison_op()) return first;
    auto n = node("comparison_operator", {std::move(first)});
    while (at_comparison_op()) {
      if (accept("not")) {
        expect("in");
      } else if (accept("is")) {
        accept("not");
      } else {
        ++pos_;
      }
      n.children.push_back(parse_bitor());
    }
    return n;
  }

  // Binary operator levels from loosest to tightest.
  SyntaxNode parse_binary(int level) {
    static const std::vector<std::vector<std::string_view>> levels{
        {"|"}, {"^"}, {"&"}, {"<<", ">>"}, {"+", "-"}, {"*", "/", "//", "%", "@"}};
    if (level == static_cast<int>(levels.size())) return parse_factor();
    auto left = parse_binary(level + 1);
    for (;;) {
      bool matched = false;
      for (auto op : levels[static_cast<std::size_t>(level)]) {
        if (at_on_line(op)) {
          ++pos_;
          left = node("binary_operator", {std::move(left), parse_binary(level + 1)});
          matched = true;
          break;
        }
      }
      if (!matched) return left;
    }
  }

  SyntaxNode parse_bitor() { return parse_binary(0); }

  SyntaxNode parse_factor() {
    DepthGuard guard(depth_);
    if (at_on_line("+") || at_on_line("-") || at_on_line("~")) {
      ++pos_;
      return node("unary_operator", {parse_factor()});
    }
    return parse_power();
  }

  SyntaxNode parse_power() {
    auto base = parse_primary();
    if (accept("**")) return node("binary_operator", {std::move(base), parse_factor()});
    return base;
  }

  SyntaxNode parse_primary() {
    if (accept("await")) return node("await", {parse_primary()});
    auto expr = parse_atom();
    for (;;) {
      if (at_on_line(".")) {
        ++pos_;
        expr = node("attribute", {std::move(expr), identifier()});
      } else if (at_on_line("(")) {
        expr = node("call", {std::move(expr), parse_arguments()});
      } else if (at_on_line("[")) {
        expr = node("subscript", {std::move(expr), parse_subscript_items()});
      } else {
        return expr;
      }
    }
  }

  SyntaxNode parse_subscript_items() {
    expect("[");
    auto items = node("subscript_items");
    while (!at_on_line("]")) {
      items.children.push_back(parse_slice_or_expression());
      if (!accept(",")) break;
    }
    expect("]");
    // A single index is stored directly under the subscript.
    if (items.children.size() == 1) return std::move(items.children.front());
    return items;
  }

  SyntaxNode parse_slice_or_expression() {
    auto slice = node("slice");
    bool is_slice = false;
    if (!at_on_line(":")) {
      auto e = parse_star_or_expression();
      if (!at_on_line(":")) return e;
      slice.children.push_back(std::move(e));
    }
    while (accept(":")) {
      is_slice = true;
      if (on_line() && !at(":") && !at("]") && !at(",")) slice.children.push_back(parse_expression());
    }
    if (!is_slice) fail("bad slice");
    return slice;
  }

  SyntaxNode parse_arguments() {
    expect("(");
    auto args = node("argument_list");
    while (!at_on_line(")")) {
      if (accept("**")) {
        args.children.push_back(node("dictionary_splat", {parse_expression()}));
      } else if (accept("*")) {
        args.children.push_back(node("list_splat", {parse_expression()}));
      } else if (peek().kind == TokenKind::identifier && on_line() && at("=", 1)) {
        auto name = identifier();
        ++pos_;
        args.children.push_back(node("keyword_argument", {std::move(name), parse_expression()}));
      } else {
        auto e = parse_named_expression();
        if (at_on_line("for") || (at_on_line("async") && at("for", 1))) {
          auto gen = node("generator_expression", {std::move(e)});
          parse_comprehension_clauses(gen);
          e = std::move(gen);
        }
        args.children.push_back(std::move(e));
      }
      if (!accept(",")) break;
    }
    expect(")");
    return args;
  }

  void parse_comprehension_clauses(SyntaxNode& comp) {
    while (at_on_line("for") || (at_on_line("async") && at("for", 1))) {
      if (at("async")) ++pos_;
      ++pos_;
      auto targets = parse_target_list();
      expect("in");
      auto iter = parse_or();
      comp.children.push_back(node("for_in_clause", {std::move(targets), std::move(iter)}));
      while (at_on_line("if")) {
        ++pos_;
        comp.children.push_back(node("if_clause", {parse_or()}));
      }
    }
  }

  static bool is_float_literal(std::string_view s) {
    if (s.size() > 1 && s[0] == '0' && std::string_view("xXoObB").find(s[1]) != std::string_view::npos) return false;
    return s.find_first_of(".eEjJ") != std::string_view::npos;
  }

  SyntaxNode parse_atom() {
    DepthGuard guard(depth_);
    if (!on_line()) fail("unexpected end of line");
    const auto& t = peek();
    switch (t.kind) {
      case TokenKind::identifier: return identifier();
      case TokenKind::number:
        ++pos_;
        return node(is_float_literal(t.lexeme) ? "float" : "integer");
      case TokenKind::string: {
        ++pos_;
        if (on_line() && peek().kind == TokenKind::string) {
          auto n = node("concatenated_string", {node("string")});
          while (on_line() && peek().kind == TokenKind::string) {
            ++pos_;
            n.children.push_back(node("string"));
          }
          return n;
        }
        return node("string");
      }
      case TokenKind::keyword:
        if (t.lexeme == "True") return ++pos_, node("true");
        if (t.lexeme == "False") return ++pos_, node("false");
        if (t.lexeme == "None") return ++pos_, node("none");
        if (t.lexeme == "yield") return parse_yield();
        fail("unexpected keyword '" + t.lexeme + "'");
      default: break;
    }
    if (accept("...")) return node("ellipsis");
    if (at_on_line("(")) return parse_paren();
    if (at_on_line("[")) return parse_list();
    if (at_on_line("{")) return parse_brace();
    fail("unexpected token '" + t.lexeme + "'");
  }

  SyntaxNode parse_paren() {
    expect("(");
    // Inside brackets newlines are insignificant; the tokenizer already
    // marks such tokens as continuing the logical line.
    if (accept(")")) return node("tuple");
    if (at("yield")) {
      auto y = parse_yield();
      expect(")");
      return node("parenthesized_expression", {std::move(y)});
    }
    auto first = parse_star_or_named();
    if (at_on_line("for") || (at_on_line("async") && at("for", 1))) {
      auto gen = node("generator_expression", {std::move(first)});
      parse_comprehension_clauses(gen);
      expect(")");
      return gen;
    }
    if (accept(")")) return node("parenthesized_expression", {std::move(first)});
    auto tuple = node("tuple", {std::move(first)});
    while (accept(",")) {
      if (at_on_line(")")) break;
      tuple.children.push_back(parse_star_or_named());
    }
    expect(")");
    return tuple;
  }

  SyntaxNode parse_star_or_named() {
    if (accept("*")) return node("list_splat", {parse_bitor()});
    return parse_named_expression();
  }

  SyntaxNode parse_list() {
    expect("[");
    auto list = node("list");
    if (accept("]")) return list;
    auto first = parse_star_or_named();
    if (at_on_line("for") || (at_on_line("async") && at("for", 1))) {
      auto comp = node("list_comprehension", {std::move(first)});
      parse_comprehension_clauses(comp);
      expect("]");
      return comp;
    }
    list.children.push_back(std::move(first));
    while (accept(",")) {
      if (at_on_line("]")) break;
      list.children.push_back(parse_star_or_named());
    }
    expect("]");
    return list;
  }

  SyntaxNode parse_dict_item() {
    if (accept("**")) return node("dictionary_splat", {parse_bitor()});
    auto key = parse_expression();
    expect(":");
    return node("pair", {std::move(key), parse_expression()});
  }

  SyntaxNode parse_brace() {
    expect("{");
    if (accept("}")) return node("dictionary");
    // Decide between dict and set from the first item.
    bool is_dict = at_on_line("**");
    SyntaxNode first;
    if (is_dict) {
      first = parse_dict_item();
    } else {
      first = parse_star_or_named();
      if (accept(":")) {
        is_dict = true;
        first = node("pair", {std::move(first), parse_expression()});
      }
    }
    if (at_on_line("for") || (at_on_line("async") && at("for", 1))) {
      auto comp = node(is_dict ? "dictionary_comprehension" : "set_comprehension", {std::move(first)});
      parse_comprehension_clauses(comp);
      expect("}");
      return comp;
    }
    auto n = node(is_dict ? "dictionary" : "set", {std::move(first)});
    while (accept(",")) {
      if (at_on_line("}")) break;
      n.children.push_back(is_dict ? parse_dict_item() : parse_star_or_named());
    }
    expect("}");
    return n;
  }

  const TokenStream& toks_;
  std::size_t pos_ = 0;
  std::size_t depth_ = 0;
  std::size_t stmt_start_ = 0;
};

}  // namespace detail

inline SyntaxTree parse(const TokenStream& tokens) {
  SyntaxTree tree;
  try {
    detail::Parser parser(tokens);
    tree.root = parser.parse_module();
    tree.parse_ok = true;
  } catch (const detail::ParseError&) {
    tree = SyntaxTree{};
  }
  return tree;
}

inline SyntaxTree parse(std::string_view source) { return parse(tokenize(source)); }

/// Number of leaves (nodes without children) in a tree.
inline std::size_t leaf_count(const SyntaxNode& n) {
  if (n.children.empty()) return 1;
  std::size_t total = 0;
  for (const auto& c : n.children) total += leaf_count(c);
  return total;
}

/// S-expression of node kinds, e.g. "(module (expression_statement (identifier)))".
inline std::string sexp(const SyntaxNode& n) {
  std::string out = "(" + n.kind;
  for (const auto& c : n.children) {
    out += ' ';
    out += sexp(c);
  }
  out += ')';
  return out;
}

}  // namespace tabrl::codesim
