#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "knnicl/textcore.hpp"
#include "support.hpp"

using namespace knnicl;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> w) { return {w.begin(), w.end()}; }

// Rebuilds an encoding from the public feature map with caller-chosen
// prefix weights.
ContextVector oracle_encode(const HashedNgramEncoder& enc, const std::vector<std::string>& u,
                            const std::vector<std::string>& p, auto prefix_weight) {
  std::vector<double> acc(enc.dim(), 0.0);
  auto add = [&](const std::vector<std::string>& toks, std::uint64_t space, auto weight) {
    auto h = HashedNgramEncoder::token_hashes(toks);
    for (std::size_t n = 1; n <= enc.config().ngram_max; ++n)
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        auto [b, s] = enc.feature(std::span(h).subspan(i, n), space);
        acc[b] += s * weight(i + n - 1, h.size());
      }
  };
  add(u, HashedNgramEncoder::kUtteranceSpace, [](std::size_t, std::size_t) { return 1.0; });
  add(p, HashedNgramEncoder::kPrefixSpace, prefix_weight);
  double norm = 0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  ContextVector out;
  for (double v : acc) out.values.push_back(static_cast<float>(v / norm));
  return out;
}

std::vector<std::string> random_sentence(std::mt19937_64& rng, const std::string& stem, std::size_t len) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < len; ++i) out.push_back(stem + std::to_string(rng() % 1000));
  return out;
}

}  // namespace

TEST(Vocabulary, ReservedIdsFixed) {
  Vocabulary v;
  EXPECT_EQ(v.size(), tok::kNumReserved);
  EXPECT_EQ(v.surface(tok::kBos), "<s>");
  EXPECT_EQ(v.surface(tok::kEos), "</s>");
  EXPECT_EQ(v.surface(tok::kSep), "<sep>");
  EXPECT_EQ(v.surface(tok::kLParen), "(");
  EXPECT_EQ(v.surface(tok::kRParen), ")");
  EXPECT_EQ(v.surface(tok::kEquals), "=");
  EXPECT_EQ(v.surface(tok::kComma), ",");
  EXPECT_EQ(v.surface(tok::kQuote), "\"");
}

TEST(Vocabulary, InternIsDenseAndInvertible) {
  Vocabulary v;
  TokenId a = v.intern("alarm");
  TokenId b = v.intern("set");
  EXPECT_EQ(a, tok::kNumReserved);
  EXPECT_EQ(b, a + 1);
  EXPECT_EQ(v.intern("alarm"), a);
  EXPECT_EQ(v.surface(a), "alarm");
  EXPECT_EQ(v.id_or_unk("missing"), tok::kUnk);
}

TEST(Vocabulary, FileRoundTrip) {
  knnicl::testing::TempDir dir;
  Vocabulary v;
  for (auto w : {"set", "an", "alarm", "CREATE_ALARM"}) v.intern(w);
  v.save(dir.file("vocab.tsv"));
  Vocabulary back = Vocabulary::load(dir.file("vocab.tsv"));
  EXPECT_EQ(back.serialize(), v.serialize());
  EXPECT_EQ(back.fingerprint(), v.fingerprint());
  EXPECT_EQ(v.serialize().substr(0, 8), "0\t<unk>\n");
}

TEST(Vocabulary, LoadRejectsGaps) {
  knnicl::testing::TempDir dir;
  Vocabulary v;
  std::string text = v.serialize() + "10\tskipped\n";
  {
    std::ofstream os(dir.file("bad.tsv"));
    os << text;
  }
  try {
    Vocabulary::load(dir.file("bad.tsv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadRow);
    EXPECT_EQ(e.line(), tok::kNumReserved + 1);
  }
}

TEST(Tokenize, Examples) {
  Vocabulary v;
  EXPECT_EQ(tokenize_interning("A ( X = \" 1 \" )", v).size(), 8u);
  auto ids = tokenize_interning("A(X)", v);
  EXPECT_EQ(surfaces(v, ids), words({"A", "(", "X", ")"}));
  EXPECT_TRUE(tokenize_interning("", v).empty());
}

TEST(Tokenize, DecodeTimeUnknownsMapToUnk) {
  Vocabulary v;
  v.intern("known");
  auto ids = tokenize("known novel", v);
  EXPECT_EQ(ids[1], tok::kUnk);
}

TEST(Tokenize, SessionVocabBypassesUnk) {
  Vocabulary v;
  v.intern("known");
  SessionVocab s(v);
  auto ids = tokenize("known novel novel", s);
  EXPECT_EQ(ids[1], v.size());
  EXPECT_EQ(ids[2], ids[1]);
  EXPECT_EQ(s.surface(ids[1]), "novel");
  EXPECT_EQ(s.size(), v.size() + 1);
}

TEST(Tokenize, DetokenizeRoundTrip) {
  Vocabulary v;
  for (const char* s : {"GET_DIRECTIONS ( DESTINATION = GET_EVENT ( NAME_EVENT = \" Eagles \" ) )", "A ( )", "x y z"})
    EXPECT_EQ(detokenize(v, tokenize_interning(s, v)), s);
}

TEST(Encoder, Deterministic) {
  HashedNgramEncoder a, b;
  auto u = words({"set", "an", "alarm", "for", "noon"});
  auto p = words({"CREATE_ALARM", "("});
  EXPECT_EQ(a.encode(u, p), a.encode(u, p));
  EXPECT_EQ(a.encode(u, p), b.encode(u, p));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(Encoder, RejectsSmallDimension) {
  EncoderConfig cfg;
  cfg.dim = 4;
  EXPECT_THROW(HashedNgramEncoder{cfg}, Error);
}

TEST(Encoder, MatchesIndependentDecayOracle) {
  HashedNgramEncoder enc;
  auto u = words({"driving", "directions", "to", "the", "eagles", "game"});
  auto p = words({"GET_DIRECTIONS", "(", "DESTINATION", "="});
  auto oracle = oracle_encode(enc, u, p, [](std::size_t last, std::size_t len) {
    return std::pow(0.9, static_cast<double>(len - 1 - last));
  });
  auto got = enc.encode(u, p);
  for (std::size_t i = 0; i < enc.dim(); ++i) EXPECT_NEAR(got.values[i], oracle.values[i], 1e-6);
}

TEST(Encoder, UnitDecayWeighsPrefixLikeUtterance) {
  EncoderConfig cfg;
  cfg.prefix_decay = 1.0;
  HashedNgramEncoder enc(cfg);
  auto u = words({"wake", "me", "up", "at", "noon"});
  auto p = words({"CREATE_ALARM", "(", "DATE_TIME", "=", "\""});
  auto oracle = oracle_encode(enc, u, p, [](std::size_t, std::size_t) { return 1.0; });
  EXPECT_EQ(enc.encode(u, p), oracle);
}

TEST(Encoder, PrefixStepCloserThanDisjointUtterance) {
  HashedNgramEncoder enc;
  auto u = words({"driving", "directions", "to", "the", "eagles", "game"});
  auto u2 = words({"wake", "me", "up", "tomorrow", "morning", "please"});
  auto p = words({"GET_DIRECTIONS", "("});
  auto p1 = words({"GET_DIRECTIONS", "(", "DESTINATION"});
  EXPECT_GT(cosine(enc.encode(u, p), enc.encode(u, p1)), cosine(enc.encode(u, p), enc.encode(u2, p)));
}

TEST(Encoder, EmbedSentenceIsEmptyPrefix) {
  HashedNgramEncoder enc;
  Vocabulary v;
  auto ids = tokenize_interning("find a bank in miami", v);
  auto e = embed_sentence(enc, v, ids);
  EXPECT_EQ(e, encode_context(enc, v, ids, std::span<const TokenId>{}));
  EXPECT_NEAR(cosine(e, e), 1.0, 1e-6);
}

TEST(Encoder, DisjointSentencesNearlyOrthogonal) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(5);
  // hashed features give cosines with sd near 1/sqrt(d) = 0.0625
  double sum = 0;
  for (int i = 0; i < 200; ++i) {
    auto a = random_sentence(rng, "a", 6);
    auto b = random_sentence(rng, "b", 6);
    double c = std::abs(cosine(enc.encode(a, {}), enc.encode(b, {})));
    EXPECT_LT(c, 0.35);
    sum += c;
  }
  EXPECT_LT(sum / 200, 0.1);
}

TEST(Encoder, UnitNorm) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    auto u = random_sentence(rng, "w", 1 + rng() % 12);
    auto p = random_sentence(rng, "p", rng() % 12);
    EXPECT_NEAR(enc.encode(u, p).norm(), 1.0, 1e-6);
  }
}

TEST(Encoder, OneTokenAppendIsLocal) {
  HashedNgramEncoder enc;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    auto u = random_sentence(rng, "w", 5 + rng() % 8);
    auto p = random_sentence(rng, "p", 5 + rng() % 8);
    auto before = enc.encode(u, p);
    p.push_back("p" + std::to_string(rng() % 1000));
    auto after = enc.encode(u, p);
    double d = 0;
    for (std::size_t j = 0; j < enc.dim(); ++j) d += std::pow(double(before.values[j]) - after.values[j], 2);
    EXPECT_LT(std::sqrt(d), 1.0);
  }
}
