#pragma once

// Group-relative advantages, the dynamic-sampling filter and the clipped
// surrogate term, as plain scalar functions a trainer can call directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ranges>
#include <span>
#include <stdexcept>
#include <vector>

namespace tabrl {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double sigma_floor = 1e-6;

  void validate() const {
    if (!(eps_low > 0) || !(eps_high > 0)) throw std::invalid_argument("clip epsilons must be positive");
    if (!(sigma_floor >= 0)) throw std::invalid_argument("sigma_floor must be >= 0");
  }
};

struct GroupAdvantages {
  double mu = 0.0;
  /// Population standard deviation.
  double sigma = 0.0;
  std::vector<double> advantages;
};

/// (R_i - mean) / max(sigma, sigma_floor), sigma being the population std.
/// A constant group gets all-zero advantages.
inline GroupAdvantages group_advantages(std::span<const double> rewards, double sigma_floor = 1e-6) {
  if (rewards.empty()) throw std::invalid_argument("group_advantages: empty reward list");
  const double n = static_cast<double>(rewards.size());
  GroupAdvantages out;
  out.mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - out.mu) * (r - out.mu);
  out.sigma = std::sqrt(ss / n);
  const double denom = std::max(out.sigma, sigma_floor);
  out.advantages.reserve(rewards.size());
  for (double r : rewards) out.advantages.push_back(denom > 0 ? (r - out.mu) / denom : 0.0);
  return out;
}

/// Keep a group only when it is neither all-correct nor all-wrong.
template <std::ranges::input_range Flags>
bool dynamic_sampling_keep(const Flags& correct_flags) {
  std::size_t total = 0, correct = 0;
  for (bool f : correct_flags) {
    ++total;
    correct += f ? 1 : 0;
  }
  if (total == 0) throw std::invalid_argument("dynamic_sampling_keep: empty group");
  return correct > 0 && correct < total;
}

inline double clip(double ratio, const ClipConfig& cfg) {
  return std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
}

/// min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)
inline double clipped_surrogate_term(double ratio, double advantage, const ClipConfig& cfg = {}) {
  if (!(ratio > 0)) throw std::invalid_argument("clipped_surrogate_term: ratio must be positive");
  return std::min(ratio * advantage, clip(ratio, cfg) * advantage);
}

/// Sum of every per-token term divided by the total token count of the group.
inline double token_weighted_objective(const std::vector<std::vector<double>>& per_token_terms) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& rollout : per_token_terms) {
    for (double t : rollout) sum += t;
    tokens += rollout.size();
  }
  if (tokens == 0) throw std::invalid_argument("token_weighted_objective: no tokens");
  return sum / static_cast<double>(tokens);
}

}  // namespace tabrl
