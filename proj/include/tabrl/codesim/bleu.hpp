#pragma once

// Token-level BLEU and keyword-weighted BLEU.
//
// Per order n: clipped matches over candidate n-grams, with multi-reference
// clipping against the maximum count in any single reference. Orders n >= 2
// with no matches use add-one smoothing, 1 / (total_n + 1); a candidate with
// no unigram overlap scores 0. The brevity penalty uses the shortest
// reference, so adding a reference never lowers the score.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tabrl::codesim {

using Words = std::vector<std::string>;

namespace detail {

inline std::string ngram_key(const Words& words, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += words[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, std::size_t> count_ngrams(const Words& words, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[ngram_key(words, i, n)];
  return counts;
}

// weight(words, start) gives the weight of the n-gram starting at `start`.
template <typename WeightFn>
double bleu_impl(const Words& candidate, std::span<const Words> references, std::size_t max_n, WeightFn&& weight) {
  if (candidate.empty() || references.empty() || max_n == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::unordered_map<std::string, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (auto& [g, c] : count_ngrams(ref, n)) {
        auto& m = max_ref[g];
        m = std::max(m, c);
      }
    }
    // Weighted clipped matches: each candidate n-gram type contributes
    // weight * min(count, max_ref_count); its weight is fixed by its first token.
    std::unordered_map<std::string, std::pair<std::size_t, double>> cand;  // count, weight
    if (candidate.size() >= n) {
      for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
        auto& slot = cand[ngram_key(candidate, i, n)];
        ++slot.first;
        slot.second = weight(candidate, i);
      }
    }
    double matched = 0.0, total = 0.0;
    for (const auto& [g, cw] : cand) {
      auto it = max_ref.find(g);
      auto clip = it == max_ref.end() ? 0 : std::min(cw.first, it->second);
      matched += cw.second * static_cast<double>(clip);
      total += cw.second * static_cast<double>(cw.first);
    }
    double precision;
    if (matched > 0.0) {
      precision = matched / total;
    } else if (n == 1) {
      return 0.0;
    } else {
      precision = 1.0 / (total + 1.0);
    }
    log_sum += std::log(precision);
  }
  std::size_t shortest = references.front().size();
  for (const auto& r : references) shortest = std::min(shortest, r.size());
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(shortest);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(max_n)), 0.0, 1.0);
}

}  // namespace detail

inline double ngram_bleu(const Words& candidate, std::span<const Words> references, std::size_t max_n = 4) {
  return detail::bleu_impl(candidate, references, max_n, [](const Words&, std::size_t) { return 1.0; });
}

/// As ngram_bleu, but n-grams whose first token is a keyword carry `keyword_weight`.
inline double weighted_ngram_bleu(const Words& candidate, std::span<const Words> references,
                                  const std::set<std::string, std::less<>>& keywords, double keyword_weight = 5.0,
                                  std::size_t max_n = 4) {
  return detail::bleu_impl(candidate, references, max_n, [&](const Words& w, std::size_t i) {
    return keywords.contains(w[i]) ? keyword_weight : 1.0;
  });
}

}  // namespace tabrl::codesim
