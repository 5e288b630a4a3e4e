#pragma once

// CodeBLEU: weighted blend of token BLEU, keyword-weighted BLEU, syntax
// subtree match and dataflow match.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tabrl/codesim/bleu.hpp"
#include "tabrl/codesim/dataflow.hpp"
#include "tabrl/codesim/syntax.hpp"
#include "tabrl/codesim/tokenizer.hpp"

namespace tabrl::codesim {

struct CodeBleuWeights {
  double ngram = 0.25;
  double weighted = 0.25;
  double syntax = 0.25;
  double dataflow = 0.25;

  void validate() const {
    if (ngram < 0 || weighted < 0 || syntax < 0 || dataflow < 0) {
      throw std::invalid_argument("codebleu weights must be non-negative");
    }
    if (std::fabs(ngram + weighted + syntax + dataflow - 1.0) > 1e-9) {
      throw std::invalid_argument("codebleu weights must sum to 1");
    }
  }
};

struct CodeSimConfig {
  CodeBleuWeights weights;
  double keyword_weight = 5.0;
  std::size_t max_n = 4;
  std::set<std::string, std::less<>> keywords = python_keywords();
};

/// One keyword per line; blank lines and surrounding whitespace ignored.
inline std::set<std::string, std::less<>> load_keywords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keywords file " + path.string());
  std::set<std::string, std::less<>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    out.insert(line.substr(b, e - b + 1));
  }
  return out;
}

/// Everything the metric needs from one snippet, computed once.
struct CodeAnalysis {
  Words words;
  SyntaxTree tree;
  DataflowGraph dataflow;
  /// Structural hashes of every subtree of height >= 2, in pre-order.
  std::vector<std::uint64_t> subtree_hashes;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

// Hash of node kinds only; fills `out` with hashes of internal nodes.
inline std::uint64_t hash_subtrees(const SyntaxNode& n, std::vector<std::uint64_t>& out) {
  std::uint64_t h = mix(std::hash<std::string>{}(n.kind) + 0x9e3779b97f4a7c15ULL);
  std::size_t slot = out.size();
  if (!n.children.empty()) out.push_back(0);
  std::uint64_t arity = 0;
  for (const auto& c : n.children) {
    h = mix(h * 31 + hash_subtrees(c, out) + (++arity));
  }
  h = mix(h ^ (arity << 48));
  if (!n.children.empty()) out[slot] = h;
  return h;
}

}  // namespace detail

inline CodeAnalysis analyze(std::string_view source) {
  CodeAnalysis a;
  auto tokens = tokenize(source);
  a.tree = parse(tokens);
  a.words.reserve(tokens.size());
  for (auto& t : tokens) a.words.push_back(std::move(t.lexeme));
  a.dataflow = build_dataflow(a.tree);
  if (a.tree.parse_ok) detail::hash_subtrees(a.tree.root, a.subtree_hashes);
  return a;
}

/// Fraction of the candidate's height >= 2 subtrees found in any reference.
/// 0 when the candidate failed to parse or has no such subtree.
inline double syntax_match(const CodeAnalysis& candidate, std::span<const CodeAnalysis* const> references) {
  if (!candidate.tree.parse_ok || candidate.subtree_hashes.empty()) return 0.0;
  std::unordered_set<std::uint64_t> pool;
  for (const auto* ref : references) {
    if (ref->tree.parse_ok) pool.insert(ref->subtree_hashes.begin(), ref->subtree_hashes.end());
  }
  std::size_t hits = 0;
  for (auto h : candidate.subtree_hashes) hits += pool.contains(h) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(candidate.subtree_hashes.size());
}

/// Fraction of candidate edges present in any reference graph; absent when
/// the candidate has no edges.
inline std::optional<double> dataflow_match(const DataflowGraph& candidate,
                                            std::span<const DataflowGraph* const> references) {
  if (candidate.edges.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const auto& e : candidate.edges) {
    for (const auto* ref : references) {
      if (ref->edges.contains(e)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(candidate.edges.size());
}

struct ComponentScores {
  double ngram = 0.0;
  double weighted = 0.0;
  std::optional<double> syntax;
  std::optional<double> dataflow;
};

/// Weighted sum over present components; absent components' weight is
/// redistributed proportionally.
inline double combine(const ComponentScores& s, const CodeBleuWeights& w) {
  double num = w.ngram * s.ngram + w.weighted * s.weighted;
  double den = w.ngram + w.weighted;
  if (s.syntax) {
    num += w.syntax * *s.syntax;
    den += w.syntax;
  }
  if (s.dataflow) {
    num += w.dataflow * *s.dataflow;
    den += w.dataflow;
  }
  return den > 0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
}

inline ComponentScores codebleu_components(const CodeAnalysis& candidate,
                                           std::span<const CodeAnalysis* const> references,
                                           const CodeSimConfig& cfg = {}) {
  ComponentScores s;
  std::vector<Words> ref_words;
  std::vector<const DataflowGraph*> ref_graphs;
  bool any_ref_parsed = false;
  for (const auto* r : references) {
    ref_words.push_back(r->words);
    ref_graphs.push_back(&r->dataflow);
    any_ref_parsed = any_ref_parsed || r->tree.parse_ok;
  }
  s.ngram = ngram_bleu(candidate.words, ref_words, cfg.max_n);
  s.weighted = weighted_ngram_bleu(candidate.words, ref_words, cfg.keywords, cfg.keyword_weight, cfg.max_n);
  if (any_ref_parsed) s.syntax = syntax_match(candidate, references);
  s.dataflow = dataflow_match(candidate.dataflow, ref_graphs);
  return s;
}

inline double codebleu(const CodeAnalysis& candidate, std::span<const CodeAnalysis* const> references,
                       const CodeSimConfig& cfg = {}) {
  if (candidate.words.empty() || references.empty()) return 0.0;
  return combine(codebleu_components(candidate, references, cfg), cfg.weights);
}

inline double codebleu(std::string_view candidate, std::span<const std::string> references,
                       const CodeSimConfig& cfg = {}) {
  if (references.empty()) throw std::invalid_argument("codebleu needs at least one reference");
  auto cand = analyze(candidate);
  std::vector<CodeAnalysis> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(analyze(r));
  std::vector<const CodeAnalysis*> ptrs;
  for (const auto& r : refs) ptrs.push_back(&r);
  return codebleu(cand, ptrs, cfg);
}

}  // namespace tabrl::codesim
