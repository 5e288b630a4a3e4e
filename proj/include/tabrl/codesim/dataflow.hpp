#pragma once

// Def-use dataflow edges over a parsed script.
//
// Every binding (assignment, augmented assignment, for/with/comprehension
// target, walrus) yields one edge per variable read by the bound value:
// `comes_from` when the value is a bare name (a copy), `computed_from`
// otherwise. Variables are renamed by first-definition order ($0, $1, ...),
// which makes matching invariant to consistent renaming; names that are never
// bound in the script (builtins, free names) keep their spelling.

#include <algorithm>
#include <compare>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "tabrl/codesim/syntax.hpp"

namespace tabrl::codesim {

enum class Relation { comes_from, computed_from };

struct DataflowEdge {
  std::string def_var;
  std::string use_var;
  Relation relation = Relation::computed_from;

  friend auto operator<=>(const DataflowEdge&, const DataflowEdge&) = default;
};

struct DataflowGraph {
  std::set<DataflowEdge> edges;
};

namespace detail {

class DataflowBuilder {
 public:
  DataflowGraph build(const SyntaxNode& root) {
    collect_definitions(root);
    visit(root);
    DataflowGraph g;
    for (auto& e : raw_) g.edges.insert(DataflowEdge{rename(e.def_var), rename(e.use_var), e.relation});
    return g;
  }

 private:
  // Pass 1: record binding names in source order to fix the renaming.
  void collect_definitions(const SyntaxNode& n) {
    const auto& k = n.kind;
    if (k == "assignment") {
      auto targets = value_index(n);
      for (std::size_t i = 0; i < targets; ++i) note_targets(n.children[i]);
    } else if (k == "augmented_assignment" || k == "for_statement" || k == "for_in_clause") {
      note_targets(n.children[0]);
    } else if (k == "with_item" && n.children.size() > 1) {
      note_targets(n.children[1]);
    } else if (k == "named_expression") {
      note_targets(n.children[0]);
    } else if (k == "function_definition" || k == "class_definition") {
      define(n.children[0].text);
    } else if (k == "aliased_import") {
      define(n.children[1].text);
    } else if (k == "import_statement" || k == "import_from_statement") {
      for (std::size_t i = k == "import_from_statement" ? 1 : 0; i < n.children.size(); ++i) {
        const auto& c = n.children[i];
        if (c.kind == "dotted_name" && !c.children.empty()) define(c.children.front().text);
      }
    } else if (k == "parameters" || k == "lambda_parameters") {
      for (const auto& p : n.children) {
        if (p.kind == "identifier") define(p.text);
        else if (!p.children.empty() && p.children.front().kind == "identifier") define(p.children.front().text);
      }
    } else if (k == "except_clause") {
      for (const auto& c : n.children) {
        if (c.kind == "identifier" && &c != &n.children.front()) define(c.text);
      }
    }
    for (const auto& c : n.children) collect_definitions(c);
  }

  // Pass 2: emit edges.
  void visit(const SyntaxNode& n) {
    const auto& k = n.kind;
    if (k == "assignment") {
      auto value_at = value_index(n);
      if (value_at < n.children.size()) {
        const auto& value = n.children[value_at];
        for (std::size_t i = 0; i < value_at; ++i) bind(n.children[i], value);
      }
    } else if (k == "augmented_assignment") {
      for (const auto& t : target_names(n.children[0])) {
        raw_.push_back({t, t, Relation::computed_from});
        for (const auto& u : reads(n.children[1])) raw_.push_back({t, u, Relation::computed_from});
      }
    } else if (k == "for_statement" || k == "for_in_clause") {
      bind(n.children[0], n.children[1]);
    } else if (k == "with_item" && n.children.size() > 1) {
      bind(n.children[1], n.children[0]);
    } else if (k == "named_expression") {
      bind(n.children[0], n.children[1]);
    }
    for (const auto& c : n.children) visit(c);
  }

  // Index of the bound value in an assignment node; the type annotation (if any) is skipped.
  static std::size_t value_index(const SyntaxNode& n) {
    if (n.children.size() >= 2 && n.children[1].kind == "type") return n.children.size() == 3 ? 2 : n.children.size();
    return n.children.size() - 1;
  }

  void bind(const SyntaxNode& target, const SyntaxNode& value) {
    const bool copy = value.kind == "identifier";
    auto uses = reads(value);
    // Subscript/attribute targets mutate their base; the index expressions are reads too.
    for (const auto& u : target_reads(target)) uses.push_back(u);
    for (const auto& t : target_names(target)) {
      for (const auto& u : uses) raw_.push_back({t, u, copy ? Relation::comes_from : Relation::computed_from});
    }
  }

  // Names bound by a target pattern: identifiers, tuples/lists of them, and
  // the base variable of subscript/attribute targets.
  static std::vector<std::string> target_names(const SyntaxNode& t) {
    std::vector<std::string> out;
    collect_target_names(t, out);
    return out;
  }

  static void collect_target_names(const SyntaxNode& t, std::vector<std::string>& out) {
    const auto& k = t.kind;
    if (k == "identifier") {
      out.push_back(t.text);
    } else if (k == "expression_list" || k == "tuple" || k == "list" || k == "pattern_list" ||
               k == "parenthesized_expression" || k == "list_splat_pattern" || k == "list_splat") {
      for (const auto& c : t.children) collect_target_names(c, out);
    } else if (k == "subscript" || k == "attribute") {
      collect_target_names(t.children[0], out);
    }
  }

  static std::vector<std::string> target_reads(const SyntaxNode& t) {
    std::vector<std::string> out;
    if (t.kind == "subscript") {
      for (std::size_t i = 1; i < t.children.size(); ++i) collect_reads(t.children[i], out);
      auto inner = target_reads(t.children[0]);
      out.insert(out.end(), inner.begin(), inner.end());
    } else if (t.kind == "attribute") {
      auto inner = target_reads(t.children[0]);
      out.insert(out.end(), inner.begin(), inner.end());
    } else if (t.kind == "expression_list" || t.kind == "tuple" || t.kind == "list" ||
               t.kind == "parenthesized_expression") {
      for (const auto& c : t.children) {
        auto inner = target_reads(c);
        out.insert(out.end(), inner.begin(), inner.end());
      }
    }
    return out;
  }

  static std::vector<std::string> reads(const SyntaxNode& value) {
    std::vector<std::string> out;
    collect_reads(value, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // Variable reads: identifier leaves, excluding attribute member names and
  // keyword-argument names.
  static void collect_reads(const SyntaxNode& n, std::vector<std::string>& out) {
    if (n.kind == "identifier") {
      out.push_back(n.text);
      return;
    }
    if (n.kind == "attribute") {
      collect_reads(n.children[0], out);
      return;
    }
    if (n.kind == "keyword_argument") {
      collect_reads(n.children[1], out);
      return;
    }
    for (const auto& c : n.children) collect_reads(c, out);
  }

  void note_targets(const SyntaxNode& t) {
    for (const auto& name : target_names(t)) define(name);
  }

  void define(const std::string& name) {
    if (!name.empty() && !order_.contains(name)) order_.emplace(name, order_.size());
  }

  std::string rename(const std::string& name) const {
    auto it = order_.find(name);
    return it == order_.end() ? name : "$" + std::to_string(it->second);
  }

  struct RawEdge {
    std::string def_var;
    std::string use_var;
    Relation relation;
  };

  std::map<std::string, std::size_t> order_;
  std::vector<RawEdge> raw_;
};

}  // namespace detail

inline DataflowGraph build_dataflow(const SyntaxTree& tree) {
  if (!tree.parse_ok) return {};
  return detail::DataflowBuilder{}.build(tree.root);
}

}  // namespace tabrl::codesim
