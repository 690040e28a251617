#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "knnicl/textcore.hpp"

namespace knnicl {

/// Probability vector over a (possibly session-extended) vocabulary.
struct TokenDistribution {
  std::vector<double> probs;

  TokenDistribution() = default;
  explicit TokenDistribution(std::size_t n) : probs(n, 0.0) {}
  explicit TokenDistribution(std::vector<double> p) : probs(std::move(p)) {}

  std::size_t size() const { return probs.size(); }
  double operator[](TokenId id) const { return probs[id]; }
  double sum() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

  /// Greedy choice; ties go to the lowest id.
  TokenId argmax() const {
    TokenId best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = static_cast<TokenId>(i);
    return best;
  }

  std::vector<std::pair<TokenId, double>> top(std::size_t n) const {
    std::vector<std::pair<TokenId, double>> all;
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (probs[i] > 0) all.emplace_back(static_cast<TokenId>(i), probs[i]);
    n = std::min(n, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                      [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    all.resize(n);
    return all;
  }

  void normalize() {
    double s = sum();
    if (s > 0)
      for (double& p : probs) p /= s;
  }

  friend bool operator==(const TokenDistribution&, const TokenDistribution&) = default;
};

}  // namespace knnicl
