#pragma once

// Exemplar selection from a demo pool: seeded random draws, embedding
// cosine ranking, and a supervised paraphrase ranker over symmetric pair
// features.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "knnicl/detail/hash.hpp"
#include "knnicl/detail/lex.hpp"
#include "knnicl/error.hpp"
#include "knnicl/textcore.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

enum class Strategy { Random, Similarity, Paraphrase };

struct PoolItem {
  std::string utterance;
  std::vector<std::string> tokens;
  ApiCall gold;
  std::string intent;  // outermost intent name
};

class DemoPool {
 public:
  DemoPool(std::vector<PoolItem> items, const ContextEncoder& encoder) : items_(std::move(items)), dim_(encoder.dim()) {
    embeddings_.reserve(items_.size());
    for (const auto& it : items_) embeddings_.push_back(encoder.encode(it.tokens, {}));
  }

  static PoolItem make_item(std::string utterance, ApiCall gold) {
    PoolItem it;
    it.tokens = detail::split_structural(utterance);
    it.utterance = std::move(utterance);
    it.intent = gold.name;
    it.gold = std::move(gold);
    return it;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t dim() const { return dim_; }
  const PoolItem& item(std::size_t i) const { return items_[i]; }
  const std::vector<PoolItem>& items() const { return items_; }
  const ContextVector& embedding(std::size_t i) const { return embeddings_[i]; }

 private:
  std::vector<PoolItem> items_;
  std::vector<ContextVector> embeddings_;
  std::size_t dim_;
};

struct SelectionConfig {
  std::size_t m = 10;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::Similarity;
};

namespace detail {

inline void check_m(const DemoPool& pool, std::size_t m) {
  if (m < 1) throw Error(ErrorCode::BadConfig, "exemplar count m must be >= 1");
  if (m > pool.size())
    throw Error(ErrorCode::PoolTooSmall, "m=" + std::to_string(m) + " exceeds pool size " + std::to_string(pool.size()));
}

/// Indices of the m highest scores, descending; ties by ascending index.
inline std::vector<std::size_t> top_m(const std::vector<double>& scores, std::size_t m) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(m);
  return idx;
}

}  // namespace detail

inline std::vector<std::size_t> select_random(const DemoPool& pool, const SelectionConfig& cfg) {
  detail::check_m(pool, cfg.m);
  std::mt19937_64 rng(cfg.seed);
  return detail::sample_without_replacement(pool.size(), cfg.m, rng);
}

inline std::vector<double> similarity_scores(const DemoPool& pool, const ContextVector& target) {
  if (target.dim() != pool.dim()) throw Error(ErrorCode::DimensionMismatch, "target embedding dimension");
  std::vector<double> s(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) s[i] = cosine(target, pool.embedding(i));
  return s;
}

inline std::vector<std::size_t> select_by_similarity(const DemoPool& pool, std::string_view target,
                                                     const ContextEncoder& encoder, const SelectionConfig& cfg) {
  detail::check_m(pool, cfg.m);
  auto toks = detail::split_structural(target);
  return detail::top_m(similarity_scores(pool, encoder.encode(toks, {})), cfg.m);
}

// ---------------------------------------------------------------------------
// Paraphrase ranking

struct LabeledPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool label = false;
};

/// For each anchor: `positives` same-intent partners and
/// `neg_ratio * positives` different-intent partners, both drawn without
/// replacement and capped by availability. An anchor whose intent occurs
/// once is paired with itself as the positive.
inline std::vector<LabeledPair> build_pair_dataset(const DemoPool& pool, std::size_t neg_ratio = 5,
                                                   std::uint64_t seed = 0, std::size_t positives = 1) {
  std::set<std::string> intents;
  for (const auto& it : pool.items()) intents.insert(it.intent);
  if (intents.size() < 2) throw Error(ErrorCode::DegeneratePool, "pool needs at least two intents for negatives");
  std::mt19937_64 rng(seed);
  std::vector<LabeledPair> out;
  for (std::size_t a = 0; a < pool.size(); ++a) {
    std::vector<std::size_t> same, other;
    for (std::size_t b = 0; b < pool.size(); ++b) {
      if (b == a) continue;
      (pool.item(b).intent == pool.item(a).intent ? same : other).push_back(b);
    }
    if (same.empty()) same.push_back(a);
    std::size_t npos = std::min(positives, same.size());
    for (auto j : detail::sample_without_replacement(same.size(), npos, rng)) out.push_back({a, same[j], true});
    std::size_t nneg = std::min(neg_ratio * npos, other.size());
    for (auto j : detail::sample_without_replacement(other.size(), nneg, rng)) out.push_back({a, other[j], false});
  }
  return out;
}

/// `utterance_a<TAB>utterance_b<TAB>label` with labels True/False.
inline void export_pairs_tsv(const DemoPool& pool, const std::vector<LabeledPair>& pairs, std::ostream& os) {
  for (const auto& p : pairs)
    os << pool.item(p.a).utterance << '\t' << pool.item(p.b).utterance << '\t' << (p.label ? "True" : "False") << '\n';
}

inline constexpr std::size_t kPairFeatures = 4;
using PairFeatures = std::array<double, kPairFeatures>;

/// Logistic scorer over symmetric pair features: embedding cosine, token
/// Jaccard, Jaccard over intent-cue tokens, and min/max length ratio.
class PairClassifier {
 public:
  std::array<double, kPairFeatures> weights{};
  double bias = 0;
  std::set<std::string> cue_tokens;

  /// Tokens seen at least twice in the pool whose occurrences fall under
  /// one outermost intent at least 80% of the time.
  static std::set<std::string> learn_cues(const DemoPool& pool, double purity = 0.8, std::size_t min_count = 2) {
    std::map<std::string, std::map<std::string, std::size_t>> by_token;
    for (const auto& it : pool.items()) {
      std::set<std::string> seen(it.tokens.begin(), it.tokens.end());
      for (const auto& t : seen) ++by_token[t][it.intent];
    }
    std::set<std::string> cues;
    for (const auto& [t, counts] : by_token) {
      std::size_t total = 0, top = 0;
      for (const auto& [intent, c] : counts) total += c, top = std::max(top, c);
      if (total >= min_count && double(top) >= purity * double(total)) cues.insert(t);
    }
    return cues;
  }

  PairFeatures features(const std::vector<std::string>& a, const ContextVector& ea, const std::vector<std::string>& b,
                        const ContextVector& eb) const {
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    auto jaccard = [](const std::set<std::string>& x, const std::set<std::string>& y) {
      if (x.empty() && y.empty()) return 0.0;
      std::size_t inter = 0;
      for (const auto& t : x) inter += y.count(t);
      return double(inter) / double(x.size() + y.size() - inter);
    };
    std::set<std::string> ca, cb;
    for (const auto& t : sa)
      if (cue_tokens.count(t)) ca.insert(t);
    for (const auto& t : sb)
      if (cue_tokens.count(t)) cb.insert(t);
    double la = double(a.size()), lb = double(b.size());
    double ratio = (la == 0 || lb == 0) ? 0.0 : std::min(la, lb) / std::max(la, lb);
    return {cosine(ea, eb), jaccard(sa, sb), jaccard(ca, cb), ratio};
  }

  double score_features(const PairFeatures& x) const {
    double z = bias;
    for (std::size_t i = 0; i < kPairFeatures; ++i) z += weights[i] * x[i];
    return 1.0 / (1.0 + std::exp(-z));
  }

  double score(const std::vector<std::string>& a, const ContextVector& ea, const std::vector<std::string>& b,
               const ContextVector& eb) const {
    return score_features(features(a, ea, b, eb));
  }
};

struct LogisticOptions {
  double learning_rate = 1.0;
  std::size_t max_epochs = 500;
  double tolerance = 1e-6;
};

/// Full-batch gradient descent on mean logistic loss. Stops when the loss
/// changes by less than `tolerance` or after `max_epochs`.
inline void fit_logistic(PairClassifier& clf, const std::vector<PairFeatures>& x, const std::vector<bool>& y,
                         const LogisticOptions& opt = {}) {
  const std::size_t n = x.size();
  bool pos = std::find(y.begin(), y.end(), true) != y.end();
  bool neg = std::find(y.begin(), y.end(), false) != y.end();
  if (!pos || !neg) throw Error(ErrorCode::SingleClassInput, "pair labels must include both classes");
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    std::array<double, kPairFeatures> gw{};
    double gb = 0, loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = clf.score_features(x[i]);
      double t = y[i] ? 1.0 : 0.0;
      loss -= t * std::log(std::max(p, 1e-300)) + (1 - t) * std::log(std::max(1 - p, 1e-300));
      double g = p - t;
      for (std::size_t j = 0; j < kPairFeatures; ++j) gw[j] += g * x[i][j];
      gb += g;
    }
    loss /= double(n);
    for (std::size_t j = 0; j < kPairFeatures; ++j) clf.weights[j] -= opt.learning_rate * gw[j] / double(n);
    clf.bias -= opt.learning_rate * gb / double(n);
    if (std::abs(prev - loss) < opt.tolerance) break;
    prev = loss;
  }
}

inline PairClassifier train_pair_classifier(const DemoPool& pool, const std::vector<LabeledPair>& pairs,
                                            const LogisticOptions& opt = {}) {
  PairClassifier clf;
  clf.cue_tokens = PairClassifier::learn_cues(pool);
  std::vector<PairFeatures> x;
  std::vector<bool> y;
  x.reserve(pairs.size());
  for (const auto& p : pairs) {
    x.push_back(clf.features(pool.item(p.a).tokens, pool.embedding(p.a), pool.item(p.b).tokens, pool.embedding(p.b)));
    y.push_back(p.label);
  }
  fit_logistic(clf, x, y, opt);
  return clf;
}

inline std::vector<std::size_t> select_by_paraphrase(const DemoPool& pool, std::string_view target,
                                                     const ContextEncoder& encoder, const PairClassifier& clf,
                                                     const SelectionConfig& cfg) {
  detail::check_m(pool, cfg.m);
  auto toks = detail::split_structural(target);
  ContextVector et = encoder.encode(toks, {});
  std::vector<double> s(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) s[i] = clf.score(toks, et, pool.item(i).tokens, pool.embedding(i));
  return detail::top_m(s, cfg.m);
}

/// Ranked selections are placed most-similar last, nearest the target;
/// random draws keep their seed order.
inline std::vector<std::size_t> prompt_order(std::vector<std::size_t> selected, Strategy strategy) {
  if (strategy != Strategy::Random) std::reverse(selected.begin(), selected.end());
  return selected;
}

}  // namespace knnicl
