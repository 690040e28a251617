#pragma once

// Tokenization, vocabularies, and the context encoder shared by datastore
// keys, decode-time queries, and sentence embeddings.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "knnicl/detail/hash.hpp"
#include "knnicl/detail/lex.hpp"
#include "knnicl/error.hpp"

namespace knnicl {

using TokenId = std::uint32_t;

namespace tok {
inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kLParen = 4;
inline constexpr TokenId kRParen = 5;
inline constexpr TokenId kEquals = 6;
inline constexpr TokenId kComma = 7;
inline constexpr TokenId kQuote = 8;
inline constexpr TokenId kNumReserved = 9;

inline bool is_structural(TokenId id) { return id >= kLParen && id <= kQuote; }
}  // namespace tok

/// Bidirectional surface/id map. Ids are dense from 0 and the reserved
/// entries (`<unk> <s> </s> <sep> ( ) = , "`) occupy ids 0..8.
class Vocabulary {
 public:
  Vocabulary() {
    for (const char* s : {"<unk>", "<s>", "</s>", "<sep>", "(", ")", "=", ",", "\""}) push(s);
  }

  TokenId intern(std::string_view surface) {
    if (auto it = index_.find(std::string(surface)); it != index_.end()) return it->second;
    return push(std::string(surface));
  }

  std::optional<TokenId> find(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id_or_unk(std::string_view surface) const { return find(surface).value_or(tok::kUnk); }

  const std::string& surface(TokenId id) const { return surfaces_.at(id); }
  std::size_t size() const { return surfaces_.size(); }

  /// `id<TAB>surface` per line, ascending ids.
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
      out += std::to_string(i);
      out += '\t';
      out += surfaces_[i];
      out += '\n';
    }
    return out;
  }

  detail::Digest fingerprint() const { return detail::sha256(serialize()); }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
    os << serialize();
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw Error(ErrorCode::BadRow, "missing tab in vocabulary", lineno);
      std::size_t id = 0;
      try {
        id = std::stoul(line.substr(0, tab));
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadRow, "bad id in vocabulary", lineno);
      }
      std::string surface = line.substr(tab + 1);
      if (id < tok::kNumReserved) {
        if (v.surfaces_[id] != surface) throw Error(ErrorCode::BadRow, "reserved id remapped", lineno);
        continue;
      }
      if (id != v.size()) throw Error(ErrorCode::BadRow, "ids must be dense and ascending", lineno);
      v.push(std::move(surface));
    }
    return v;
  }

 private:
  TokenId push(std::string s) {
    auto id = static_cast<TokenId>(surfaces_.size());
    index_.emplace(s, id);
    surfaces_.push_back(std::move(s));
    return id;
  }

  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Decode-time view over a frozen vocabulary. Surfaces missing from the
/// base vocabulary get session-local ids past `base_size()`, which lets the
/// copy mechanism emit utterance words the corpus never contained.
class SessionVocab {
 public:
  explicit SessionVocab(const Vocabulary& base) : base_(&base) {}

  TokenId id(std::string_view surface) {
    if (auto found = base_->find(surface)) return *found;
    for (std::size_t i = 0; i < extra_.size(); ++i)
      if (extra_[i] == surface) return static_cast<TokenId>(base_->size() + i);
    extra_.emplace_back(surface);
    return static_cast<TokenId>(base_->size() + extra_.size() - 1);
  }

  const std::string& surface(TokenId id) const {
    if (id < base_->size()) return base_->surface(id);
    return extra_.at(id - base_->size());
  }

  std::size_t size() const { return base_->size() + extra_.size(); }
  std::size_t base_size() const { return base_->size(); }
  const Vocabulary& base() const { return *base_; }

 private:
  const Vocabulary* base_;
  std::vector<std::string> extra_;
};

template <class V>
concept SurfaceLookup = requires(const V& v, TokenId id) {
  { v.surface(id) } -> std::convertible_to<const std::string&>;
};

/// Splits on whitespace with `( ) = , "` as standalone tokens and interns
/// every surface (corpus-build path).
inline std::vector<TokenId> tokenize_interning(std::string_view text, Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& s : detail::split_structural(text)) ids.push_back(vocab.intern(s));
  return ids;
}

/// Decode-time tokenization against a frozen vocabulary; unknowns become UNK.
inline std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& s : detail::split_structural(text)) ids.push_back(vocab.id_or_unk(s));
  return ids;
}

inline std::vector<TokenId> tokenize(std::string_view text, SessionVocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& s : detail::split_structural(text)) ids.push_back(vocab.id(s));
  return ids;
}

template <SurfaceLookup V>
std::vector<std::string> surfaces(const V& vocab, std::span<const TokenId> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.surface(id));
  return out;
}

template <SurfaceLookup V>
std::string detokenize(const V& vocab, std::span<const TokenId> ids) {
  return detail::join(surfaces(vocab, ids));
}

// ---------------------------------------------------------------------------
// Context encoding

struct EncoderConfig {
  std::size_t dim = 256;
  std::size_t ngram_max = 3;
  double prefix_decay = 0.9;
  std::uint64_t seed = 0x6b6e6e69636cULL;

  void validate() const {
    if (dim < 8) throw Error(ErrorCode::BadConfig, "encoder dimension must be >= 8");
    if (ngram_max < 1) throw Error(ErrorCode::BadConfig, "ngram_max must be >= 1");
    if (!(prefix_decay > 0.0 && prefix_decay <= 1.0))
      throw Error(ErrorCode::BadConfig, "prefix_decay must be in (0, 1]");
  }
};

struct ContextVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  double norm() const {
    double s = 0;
    for (float v : values) s += double(v) * double(v);
    return std::sqrt(s);
  }
  friend bool operator==(const ContextVector&, const ContextVector&) = default;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

inline double cosine(const ContextVector& a, const ContextVector& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0;
  return dot(a.values, b.values) / (na * nb);
}

/// Maps (utterance, generated prefix) to a fixed-dimension vector. The same
/// encoder instance must produce datastore keys and decode-time queries.
class ContextEncoder {
 public:
  virtual ~ContextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual ContextVector encode(std::span<const std::string> utterance,
                               std::span<const std::string> prefix) const = 0;
  virtual detail::Digest fingerprint() const = 0;
};

/// Signed feature hashing of word n-grams. Utterance n-grams weigh 1;
/// prefix n-grams weigh decay^(distance of their last token from the prefix
/// end). Utterance and prefix features are hashed in separate namespaces.
class HashedNgramEncoder final : public ContextEncoder {
 public:
  explicit HashedNgramEncoder(EncoderConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t dim() const override { return cfg_.dim; }

  ContextVector encode(std::span<const std::string> utterance,
                       std::span<const std::string> prefix) const override {
    std::vector<double> acc(cfg_.dim, 0.0);
    std::vector<std::uint64_t> uh = token_hashes(utterance);
    std::vector<std::uint64_t> ph = token_hashes(prefix);
    add_ngrams(uh, kUtteranceSpace, acc, [](std::size_t) { return 1.0; });
    const double decay = cfg_.prefix_decay;
    const std::size_t plen = ph.size();
    add_ngrams(ph, kPrefixSpace, acc, [&](std::size_t last) {
      return std::pow(decay, static_cast<double>(plen - 1 - last));
    });
    double s = 0;
    for (double v : acc) s += v * v;
    ContextVector out;
    out.values.resize(cfg_.dim);
    const double inv = s > 0 ? 1.0 / std::sqrt(s) : 0.0;
    for (std::size_t i = 0; i < cfg_.dim; ++i) out.values[i] = static_cast<float>(acc[i] * inv);
    return out;
  }

  detail::Digest fingerprint() const override {
    std::ostringstream os;
    os.precision(17);
    os << "hashed-ngram-v1;dim=" << cfg_.dim << ";ngram_max=" << cfg_.ngram_max
       << ";decay=" << cfg_.prefix_decay << ";seed=" << cfg_.seed;
    return detail::sha256(os.str());
  }

  /// Bucket and sign for one n-gram of token hashes in a namespace. Exposed
  /// so tests can rebuild vectors independently.
  std::pair<std::size_t, double> feature(std::span<const std::uint64_t> gram, std::uint64_t space) const {
    std::uint64_t h = detail::combine(cfg_.seed, space);
    h = detail::combine(h, gram.size());
    for (auto t : gram) h = detail::combine(h, t);
    std::size_t bucket = static_cast<std::size_t>((h & 0xffffffffULL) % cfg_.dim);
    double sign = (h >> 63) ? -1.0 : 1.0;
    return {bucket, sign};
  }

  static std::vector<std::uint64_t> token_hashes(std::span<const std::string> toks) {
    std::vector<std::uint64_t> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(detail::fnv1a64(t));
    return out;
  }

  static constexpr std::uint64_t kUtteranceSpace = 1;
  static constexpr std::uint64_t kPrefixSpace = 2;

 private:
  template <class Weight>
  void add_ngrams(const std::vector<std::uint64_t>& toks, std::uint64_t space, std::vector<double>& acc,
                  Weight weight) const {
    for (std::size_t n = 1; n <= cfg_.ngram_max; ++n) {
      if (toks.size() < n) break;
      for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        auto [bucket, sign] = feature(std::span(toks).subspan(i, n), space);
        acc[bucket] += sign * weight(i + n - 1);
      }
    }
  }

  EncoderConfig cfg_;
};

/// Encodes token ids through their surfaces, so ids from a session
/// vocabulary and from the corpus vocabulary agree whenever surfaces do.
template <SurfaceLookup V>
ContextVector encode_context(const ContextEncoder& enc, const V& vocab, std::span<const TokenId> utterance,
                             std::span<const TokenId> prefix) {
  auto u = surfaces(vocab, utterance);
  auto p = surfaces(vocab, prefix);
  return enc.encode(u, p);
}

template <SurfaceLookup V>
ContextVector embed_sentence(const ContextEncoder& enc, const V& vocab, std::span<const TokenId> utterance) {
  return encode_context(enc, vocab, utterance, std::span<const TokenId>{});
}

}  // namespace knnicl
