#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "knnicl/datastore.hpp"
#include "support.hpp"

using namespace knnicl;

namespace {

ContextVector random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> g;
  ContextVector v;
  v.values.resize(d);
  for (auto& x : v.values) x = g(rng);
  return v;
}

// Random store with some duplicated rows so distance ties occur.
Datastore random_store(std::mt19937_64& rng, std::size_t n, std::size_t d, TokenId vocab = 50) {
  Datastore s(d, RecordFilter::AllTokens, {}, {});
  std::vector<ContextVector> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rows.empty() && rng() % 10 == 0)
      rows.push_back(rows[rng() % rows.size()]);
    else
      rows.push_back(random_vector(rng, d));
    s.append(rows.back(), static_cast<TokenId>(rng() % vocab));
  }
  return s;
}

std::vector<Neighbor> brute_force(const Datastore& s, const ContextVector& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double d = 0;
    for (std::size_t j = 0; j < s.dim(); ++j) {
      double diff = double(q.values[j]) - double(s.key(i)[j]);
      d += diff * diff;
    }
    all.push_back({d, s.value(i), i});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(std::min(k, all.size()));
  return all;
}

struct Built {
  Vocabulary vocab;
  HashedNgramEncoder encoder;
  std::vector<DatastoreExample> examples;

  void add(const std::string& utt, const std::string& api) {
    tokenize_interning(utt, vocab);
    tokenize_interning(api, vocab);
    examples.push_back({utt, parse_api(api)});
  }
};

}  // namespace

TEST(BuildDatastore, LabelsOnlyKeepsIntentAndSlotNames) {
  Built b;
  b.add("m", "A ( X = \" m \" )");
  Datastore s = build_datastore(b.examples, b.encoder, b.vocab, RecordFilter::LabelsOnly);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(b.vocab.surface(s.value(0)), "A");
  EXPECT_EQ(b.vocab.surface(s.value(1)), "X");
}

TEST(BuildDatastore, AllTokensKeepsEveryPosition) {
  Built b;
  b.add("m", "A ( X = \" m \" )");
  Datastore s = build_datastore(b.examples, b.encoder, b.vocab, RecordFilter::AllTokens);
  ASSERT_EQ(s.size(), 8u);
  std::vector<std::string> values;
  for (std::size_t i = 0; i < s.size(); ++i) values.push_back(b.vocab.surface(s.value(i)));
  EXPECT_EQ(values, (std::vector<std::string>{"A", "(", "X", "=", "\"", "m", "\"", ")"}));
  EXPECT_EQ(s.filter(), RecordFilter::AllTokens);
}

TEST(BuildDatastore, FigureTwoRecordIsPresent) {
  Built b;
  b.add("Driving directions to the Eagles game",
        "GET_DIRECTIONS ( DESTINATION = GET_EVENT ( NAME_EVENT = \" Eagles \" , CATEGORY_EVENT = \" game \" ) )");
  Datastore s = build_datastore(b.examples, b.encoder, b.vocab);
  std::vector<std::string> utt = detail::split_structural("Driving directions to the Eagles game");
  std::vector<std::string> prefix = {"GET_DIRECTIONS", "(", "DESTINATION", "="};
  ContextVector key = b.encoder.encode(utt, prefix);
  auto event = *b.vocab.find("GET_EVENT");
  bool found = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto k = s.key(i);
    if (s.value(i) == event && std::equal(k.begin(), k.end(), key.values.begin())) found = true;
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(s.size(), 5u);  // GET_DIRECTIONS DESTINATION GET_EVENT NAME_EVENT CATEGORY_EVENT
}

TEST(BuildDatastore, Errors) {
  Built b;
  std::vector<DatastoreExample> none;
  try {
    build_datastore(none, b.encoder, b.vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
  Vocabulary empty;
  std::vector<DatastoreExample> one = {{"m", parse_api("A ( X = \" m \" )")}};
  try {
    build_datastore(one, b.encoder, empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VocabMismatch);
  }
}

TEST(BuildDatastore, OwnRecordsRetrievedAtDistanceZero) {
  Built b;
  b.add("set an alarm for 7 am", "CREATE_ALARM ( DATE_TIME = \" 7 am \" )");
  b.add("will it be rainy tonight", "GET_WEATHER ( WEATHER_ATTRIBUTE = \" rainy \" , DATE_TIME = \" tonight \" )");
  Datastore s = build_datastore(b.examples, b.encoder, b.vocab, RecordFilter::AllTokens);
  std::size_t record = 0;
  for (const auto& ex : b.examples) {
    auto utt = detail::split_structural(ex.utterance);
    auto api = detail::split_structural(serialize_api(ex.gold));
    for (std::size_t j = 0; j < api.size(); ++j, ++record) {
      ContextVector q = b.encoder.encode(utt, std::span<const std::string>(api.data(), j));
      NeighborSet r = query_exact(s, q, 1);
      ASSERT_EQ(r.size(), 1u);
      EXPECT_EQ(r.entries[0].distance, 0.0);
      EXPECT_EQ(r.entries[0].value, s.value(record));
    }
  }
}

TEST(Query, SelfRetrieval) {
  std::mt19937_64 rng(3);
  Datastore s = random_store(rng, 100, 16);
  for (std::size_t i = 0; i < s.size(); i += 7) {
    ContextVector q;
    q.values.assign(s.key(i).begin(), s.key(i).end());
    NeighborSet r = query_exact(s, q, 3);
    EXPECT_EQ(r.entries[0].distance, 0.0);
    // duplicates of row i share distance 0 and come in index order
    EXPECT_EQ(s.value(r.entries[0].index), s.value(i));
    EXPECT_LE(r.entries[0].index, i);
  }
}

TEST(Query, ExactMatchesBruteForceIncludingTies) {
  std::mt19937_64 rng(11);
  for (std::size_t n : {10u, 1000u}) {
    Datastore s = random_store(rng, n, 256);
    for (int t = 0; t < 100; ++t) {
      ContextVector q;
      if (t % 4 == 0) {
        auto row = s.key(rng() % n);
        q.values.assign(row.begin(), row.end());
      } else {
        q = random_vector(rng, 256);
      }
      std::size_t k = 1 + rng() % 30;
      NeighborSet got = query_exact(s, q, k);
      EXPECT_EQ(got.entries, brute_force(s, q, k)) << "n=" << n << " t=" << t;
    }
  }
}

TEST(Query, KLargerThanStoreReturnsEverything) {
  std::mt19937_64 rng(5);
  Datastore s = random_store(rng, 7, 8);
  NeighborSet r = query_exact(s, random_vector(rng, 8), 100);
  EXPECT_EQ(r.size(), 7u);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r.entries[i - 1].distance, r.entries[i].distance);
}

TEST(Query, DimensionAndConfigErrors) {
  std::mt19937_64 rng(5);
  Datastore s = random_store(rng, 7, 8);
  try {
    query_exact(s, random_vector(rng, 9), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  KnnConfig bad;
  bad.k = 0;
  EXPECT_THROW(query(s, random_vector(rng, 8), bad), Error);
  bad = {};
  bad.temperature = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.n_lists = 4;
  bad.n_probe = 5;
  EXPECT_THROW(bad.validate(), Error);
  try {
    s.append(random_vector(rng, 3), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Query, RetrieverChecksFingerprints) {
  Built b;
  b.add("m", "A ( X = \" m \" )");
  Datastore s = build_datastore(b.examples, b.encoder, b.vocab);
  EXPECT_NO_THROW(KnnRetriever(s, b.encoder, b.vocab));
  HashedNgramEncoder other(EncoderConfig{.dim = 128});
  try {
    KnnRetriever r(s, other, b.vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FingerprintMismatch);
  }
  Vocabulary v2 = b.vocab;
  v2.intern("extra");
  EXPECT_THROW(KnnRetriever(s, b.encoder, v2), Error);
}

TEST(Query, IvfRecallOnGaussianData) {
  std::mt19937_64 rng(23);
  const std::size_t n = 5000, d = 256, k = 10;
  // clustered data, as the keys of a real store are
  std::vector<ContextVector> centers;
  for (int c = 0; c < 50; ++c) centers.push_back(random_vector(rng, d));
  std::normal_distribution<float> g(0.0f, 0.3f);
  Datastore s(d, RecordFilter::LabelsOnly, {}, {});
  for (std::size_t i = 0; i < n; ++i) {
    ContextVector v = centers[rng() % centers.size()];
    for (auto& x : v.values) x += g(rng);
    s.append(v, static_cast<TokenId>(i % 40));
  }
  IvfIndex ivf(s);
  EXPECT_EQ(ivf.n_lists(), 71u);
  std::size_t hit = 0, total = 0;
  for (int t = 0; t < 100; ++t) {
    ContextVector q = centers[rng() % centers.size()];
    for (auto& x : q.values) x += g(rng);
    auto truth = query_exact(s, q, k);
    auto got = ivf.query(q, k);
    for (const auto& a : truth.entries) {
      ++total;
      for (const auto& b : got.entries) hit += a.index == b.index;
    }
  }
  EXPECT_GE(double(hit) / double(total), 0.95);
}

TEST(KnnDistribution, PointMassAndHandSoftmax) {
  NeighborSet one{{{0.0, 3, 0}}};
  auto p = knn_distribution(one, 100, 5);
  EXPECT_EQ(p.probs, (std::vector<double>{0, 0, 0, 1, 0}));

  const double temp = 200;
  NeighborSet two{{{0.0, 1, 0}, {temp * std::log(2.0), 2, 1}}};
  p = knn_distribution(two, temp, 4);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[2], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[3], 0.0);

  NeighborSet same{{{0.0, 2, 0}, {0.0, 2, 1}}};
  p = knn_distribution(same, 50, 3);
  EXPECT_EQ(p.probs, (std::vector<double>{0, 0, 1}));
}

TEST(KnnDistribution, MatchesDirectSoftmaxAndNormalizes) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> dist(0.0, 4.0);
  for (int t = 0; t < 200; ++t) {
    NeighborSet ns;
    std::size_t k = 1 + rng() % 50;
    for (std::size_t i = 0; i < k; ++i) ns.entries.push_back({dist(rng), static_cast<TokenId>(rng() % 20), i});
    double temp = 50.0 * double(1 + rng() % 10);
    auto p = knn_distribution(ns, temp, 20);
    std::vector<double> want(20, 0.0);
    double z = 0;
    for (const auto& n : ns.entries) z += std::exp(-n.distance / temp);
    for (const auto& n : ns.entries) want[n.value] += std::exp(-n.distance / temp) / z;
    for (std::size_t v = 0; v < 20; ++v) EXPECT_NEAR(p[static_cast<TokenId>(v)], want[v], 1e-12);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
  }
}

TEST(KnnDistribution, TemperatureFlattens) {
  auto p1 = [](double d1, double d2, double temp) {
    NeighborSet ns{{{d1, 0, 0}, {d2, 1, 1}}};
    return knn_distribution(ns, temp, 2)[0];
  };
  double prev = 1.0;
  for (double temp : {0.1, 1.0, 10.0, 50.0, 100.0, 500.0}) {
    double p = p1(0.2, 0.9, temp);
    EXPECT_LT(p, prev);
    EXPECT_GT(p, 0.5);
    prev = p;
  }
  EXPECT_NEAR(p1(0.2, 0.9, 1e9), 0.5, 1e-6);
  auto p2 = [](double d2) {
    NeighborSet ns{{{0.2, 0, 0}, {d2, 1, 1}}};
    return knn_distribution(ns, 1.0, 2)[1];
  };
  EXPECT_GT(p2(0.5), p2(0.8));
}

TEST(KnnDistribution, Errors) {
  try {
    knn_distribution(NeighborSet{}, 100, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyNeighborSet);
  }
  NeighborSet one{{{0.0, 3, 0}}};
  EXPECT_THROW(knn_distribution(one, 0.0, 5), Error);
  EXPECT_THROW(knn_distribution(one, 1.0, 2), Error);
}

TEST(Persistence, RoundTripAndQueries) {
  knnicl::testing::TempDir tmp;
  std::mt19937_64 rng(31);
  Datastore s = random_store(rng, 300, 32);
  s.save(tmp.file("s.knni"));
  Datastore r = Datastore::load(tmp.file("s.knni"));
  EXPECT_TRUE(r == s);
  EXPECT_EQ(r.size(), 300u);
  EXPECT_EQ(r.dim(), 32u);
  for (int t = 0; t < 50; ++t) {
    ContextVector q = random_vector(rng, 32);
    EXPECT_EQ(query_exact(s, q, 10), query_exact(r, q, 10));
  }
}

TEST(Persistence, HeaderLayout) {
  Datastore s(8, RecordFilter::AllTokens, {}, {});
  ContextVector v;
  v.values.assign(8, 0.5f);
  s.append(v, 42);
  std::string bytes = s.to_bytes();
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 1 + 32 + 32 + 8 * 4 + 4 + 4);
  EXPECT_EQ(bytes.substr(0, 4), "KNNI");
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 8);   // d
  EXPECT_EQ(bytes[12], 1);  // N
  EXPECT_EQ(bytes[20], 1);  // filter
  EXPECT_EQ(static_cast<unsigned char>(bytes[85 + 32]), 42u);
}

TEST(Persistence, CorruptionDetected) {
  std::mt19937_64 rng(37);
  Datastore s = random_store(rng, 20, 8);
  std::string bytes = s.to_bytes();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x5a);
    try {
      Datastore::from_bytes(bad);
      FAIL() << "byte " << i;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::CorruptStore) << "byte " << i;
    }
  }
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      Datastore::from_bytes(bytes.substr(0, cut));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::CorruptStore);
    }
  }
}

TEST(Persistence, VersionMismatch) {
  Datastore s(8, RecordFilter::LabelsOnly, {}, {});
  std::string bytes = s.to_bytes();
  bytes.resize(bytes.size() - 4);
  bytes[4] = 2;
  auto crc = detail::crc32({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
  detail::put<std::uint32_t>(bytes, crc);
  try {
    Datastore::from_bytes(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
  }
}

TEST(Persistence, MissingFile) {
  knnicl::testing::TempDir tmp;
  try {
    Datastore::load(tmp.file("absent"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}
