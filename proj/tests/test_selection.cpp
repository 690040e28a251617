#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "knnicl/selection.hpp"

using namespace knnicl;

namespace {

const std::vector<std::string> kWords = {"set", "alarm", "for", "seven", "wake", "me", "up", "weather",
                                         "rain", "boston", "tomorrow", "directions", "to", "home", "work",
                                         "how", "long", "drive", "event", "concert", "near", "the", "a"};

DemoPool make_pool(const std::vector<std::pair<std::string, std::string>>& rows, const ContextEncoder& enc) {
  std::vector<PoolItem> items;
  for (const auto& [utt, api] : rows) items.push_back(DemoPool::make_item(utt, parse_api(api)));
  return DemoPool(std::move(items), enc);
}

DemoPool random_pool(std::mt19937_64& rng, std::size_t n, const ContextEncoder& enc) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::string utt;
    std::size_t len = 2 + rng() % 6;
    for (std::size_t j = 0; j < len; ++j) utt += (j ? " " : "") + kWords[rng() % kWords.size()];
    rows.push_back({utt, "I" + std::to_string(rng() % 4) + " ( )"});
  }
  return make_pool(rows, enc);
}

std::vector<std::size_t> argsort_desc(const std::vector<double>& s, std::size_t m) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
  idx.resize(m);
  return idx;
}

}  // namespace

TEST(RandomSelection, DeterministicDistinctAndComplete) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(1);
  DemoPool pool = random_pool(rng, 30, enc);
  SelectionConfig cfg{.m = 10, .seed = 4, .strategy = Strategy::Random};
  auto a = select_random(pool, cfg);
  EXPECT_EQ(a, select_random(pool, cfg));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 10u);
  cfg.seed = 5;
  EXPECT_NE(a, select_random(pool, cfg));
  cfg.m = 30;
  auto all = select_random(pool, cfg);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(30);
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(all, want);
}

TEST(RandomSelection, UniformFrequencies) {
  HashedNgramEncoder enc;
  DemoPool pool = make_pool({{"a", "A ( )"}, {"b", "B ( )"}, {"c", "C ( )"}, {"d", "D ( )"}}, enc);
  std::vector<int> counts(4, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++counts[select_random(pool, {.m = 1, .seed = seed})[0]];
  double chi2 = 0;
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  for (int c : counts) {
    EXPECT_LT(std::abs(c - 2500), 3 * sigma);
    chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
  }
  EXPECT_LT(chi2, 11.34);  // 3 degrees of freedom, p = 0.01
}

TEST(RandomSelection, SizeErrors) {
  HashedNgramEncoder enc;
  DemoPool pool = make_pool({{"a", "A ( )"}, {"b", "B ( )"}}, enc);
  try {
    select_random(pool, {.m = 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PoolTooSmall);
  }
  try {
    select_random(pool, {.m = 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadConfig);
  }
}

TEST(SimilaritySelection, IdenticalUtteranceRanksFirst) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(2);
  DemoPool pool = random_pool(rng, 40, enc);
  for (std::size_t i = 0; i < pool.size(); i += 5) {
    auto r = select_by_similarity(pool, pool.item(i).utterance, enc, {.m = 3});
    EXPECT_NEAR(cosine(enc.encode(pool.item(i).tokens, {}), pool.embedding(r[0])), 1.0, 1e-6);
    EXPECT_EQ(pool.item(r[0]).utterance, pool.item(i).utterance);
  }
}

TEST(SimilaritySelection, MatchesFullSortOracle) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(3);
  DemoPool pool = random_pool(rng, 60, enc);
  for (int t = 0; t < 100; ++t) {
    std::string target;
    for (int j = 0; j < 4; ++j) target += (j ? " " : "") + kWords[rng() % kWords.size()];
    auto toks = detail::split_structural(target);
    ContextVector e = enc.encode(toks, {});
    std::vector<double> s;
    for (std::size_t i = 0; i < pool.size(); ++i) s.push_back(cosine(e, pool.embedding(i)));
    EXPECT_EQ(select_by_similarity(pool, target, enc, {.m = 10}), argsort_desc(s, 10));
  }
}

TEST(SimilaritySelection, SharedTokensWin) {
  HashedNgramEncoder enc;
  DemoPool pool = make_pool({{"purple monkey dishwasher", "A ( )"},
                             {"wake me up at seven", "B ( )"},
                             {"rain in boston tomorrow", "C ( )"},
                             {"how long to drive", "D ( )"}},
                            enc);
  auto r = select_by_similarity(pool, "set alarm wake me up please", enc, {.m = 1});
  EXPECT_EQ(r, (std::vector<std::size_t>{1}));
}

TEST(SimilaritySelection, PoolOrderOnlyAffectsTies) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(8);
  DemoPool pool = random_pool(rng, 25, enc);
  std::vector<PoolItem> reversed(pool.items().rbegin(), pool.items().rend());
  DemoPool rev(reversed, enc);
  std::string target = "set alarm for seven tomorrow";
  auto a = select_by_similarity(pool, target, enc, {.m = 5});
  auto b = select_by_similarity(rev, target, enc, {.m = 5});
  auto scores = similarity_scores(pool, enc.encode(detail::split_structural(target), {}));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(scores[a[i]], scores[pool.size() - 1 - b[i]]);
}

TEST(PairDataset, RatioAndLabels) {
  HashedNgramEncoder enc;
  DemoPool pool = make_pool({{"a one", "A ( )"},
                             {"a two", "A ( )"},
                             {"a three", "A ( )"},
                             {"b one", "B ( )"},
                             {"b two", "B ( )"},
                             {"b three", "B ( )"},
                             {"c one", "C ( )"},
                             {"c two", "C ( )"}},
                            enc);
  auto pairs = build_pair_dataset(pool, 5, 9);
  std::map<std::size_t, std::pair<int, int>> per_anchor;
  for (const auto& p : pairs) {
    EXPECT_EQ(p.label, pool.item(p.a).intent == pool.item(p.b).intent);
    (p.label ? per_anchor[p.a].first : per_anchor[p.a].second)++;
  }
  ASSERT_EQ(per_anchor.size(), pool.size());
  for (const auto& [a, c] : per_anchor) {
    EXPECT_EQ(c.first, 1);
    EXPECT_EQ(c.second, 5);
  }
  auto again = build_pair_dataset(pool, 5, 9);
  ASSERT_EQ(again.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(again[i].b, pairs[i].b);
}

TEST(PairDataset, NegativesCappedByAvailability) {
  HashedNgramEncoder enc;
  DemoPool pool = make_pool({{"a one", "A ( )"}, {"a two", "A ( )"}, {"b one", "B ( )"}}, enc);
  auto pairs = build_pair_dataset(pool, 5, 0);
  for (const auto& p : pairs) EXPECT_EQ(p.label, pool.item(p.a).intent == pool.item(p.b).intent);
  EXPECT_EQ(pairs.size(), 2u + 2u + 1u + 2u);  // a's: 1 pos + 1 neg each; b: self pos + 2 neg
}

TEST(PairDataset, SingleIntentRejectedAndExport) {
  HashedNgramEncoder enc;
  DemoPool one = make_pool({{"a", "A ( )"}, {"b", "A ( X = \" b \" )"}}, enc);
  try {
    build_pair_dataset(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePool);
  }
  DemoPool two = make_pool({{"x y", "A ( )"}, {"z", "B ( )"}}, enc);
  std::ostringstream os;
  export_pairs_tsv(two, {{0, 1, false}, {1, 1, true}}, os);
  EXPECT_EQ(os.str(), "x y\tz\tFalse\nz\tz\tTrue\n");
}

TEST(PairClassifier, SeparableDataFitsAndScoresAreProbabilities) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PairFeatures> x;
  std::vector<bool> y;
  for (int i = 0; i < 400; ++i) {
    PairFeatures f{u(rng), u(rng), u(rng), u(rng)};
    double margin = f[0] + 0.5 * f[2] - 0.75;
    if (std::abs(margin) < 0.05) continue;
    x.push_back(f);
    y.push_back(margin > 0);
  }
  PairClassifier clf;
  fit_logistic(clf, x, y);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = clf.score_features(x[i]);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    correct += (s > 0.5) == y[i];
  }
  EXPECT_GE(double(correct) / double(x.size()), 0.95);

  try {
    fit_logistic(clf, {x[0]}, {true});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClassInput);
  }
}

TEST(PairClassifier, ScoreIsSymmetric) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(14);
  DemoPool pool = random_pool(rng, 40, enc);
  PairClassifier clf = train_pair_classifier(pool, build_pair_dataset(pool, 5, 1));
  for (int t = 0; t < 100; ++t) {
    std::size_t a = rng() % pool.size(), b = rng() % pool.size();
    double ab = clf.score(pool.item(a).tokens, pool.embedding(a), pool.item(b).tokens, pool.embedding(b));
    double ba = clf.score(pool.item(b).tokens, pool.embedding(b), pool.item(a).tokens, pool.embedding(a));
    EXPECT_EQ(ab, ba);
  }
}

TEST(ParaphraseSelection, CosineOnlyClassifierMatchesSimilarity) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(15);
  DemoPool pool = random_pool(rng, 50, enc);
  PairClassifier clf;
  clf.weights = {3.0, 0.0, 0.0, 0.0};
  clf.bias = -1.0;
  for (int t = 0; t < 20; ++t) {
    std::string target = kWords[rng() % kWords.size()] + " " + kWords[rng() % kWords.size()] + " alarm";
    EXPECT_EQ(select_by_paraphrase(pool, target, enc, clf, {.m = 8}), select_by_similarity(pool, target, enc, {.m = 8}));
  }
}

TEST(ParaphraseSelection, MatchesFullSortOverScores) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(16);
  DemoPool pool = random_pool(rng, 50, enc);
  PairClassifier clf = train_pair_classifier(pool, build_pair_dataset(pool, 5, 2));
  for (int t = 0; t < 20; ++t) {
    std::string target = kWords[rng() % kWords.size()] + " " + kWords[rng() % kWords.size()];
    auto toks = detail::split_structural(target);
    ContextVector e = enc.encode(toks, {});
    std::vector<double> s;
    for (std::size_t i = 0; i < pool.size(); ++i) s.push_back(clf.score(toks, e, pool.item(i).tokens, pool.embedding(i)));
    EXPECT_EQ(select_by_paraphrase(pool, target, enc, clf, {.m = 10}), argsort_desc(s, 10));
  }
  EXPECT_THROW(select_by_paraphrase(pool, "x", enc, clf, {.m = 0}), Error);
}

TEST(PromptOrder, RankedReversedRandomKept) {
  std::vector<std::size_t> sel = {4, 2, 9};
  EXPECT_EQ(prompt_order(sel, Strategy::Similarity), (std::vector<std::size_t>{9, 2, 4}));
  EXPECT_EQ(prompt_order(sel, Strategy::Paraphrase), (std::vector<std::size_t>{9, 2, 4}));
  EXPECT_EQ(prompt_order(sel, Strategy::Random), sel);
}
