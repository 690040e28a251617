#pragma once

// Language-model interface and the reference n-gram LM: interpolated
// absolute discounting, exemplar-count prompt mixing, and a copy mixture
// over the target utterance inside open quoted spans.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "knnicl/detail/hash.hpp"
#include "knnicl/distribution.hpp"
#include "knnicl/error.hpp"
#include "knnicl/prompt.hpp"
#include "knnicl/textcore.hpp"

namespace knnicl {

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  /// Next-token distribution over `prompt.vocab_extent` entries given the
  /// target utterance and the API tokens generated so far.
  virtual TokenDistribution next_dist(const Prompt& prompt, std::span<const TokenId> utterance,
                                      std::span<const TokenId> prefix) const = 0;
};

struct NGramLMConfig {
  std::size_t order = 3;
  double discount = 0.75;
  double prompt_mix = 0.5;  // alpha
  double copy_boost = 0.5;  // beta
  // Exemplar i of m is counted with weight 1 + recency * i / (m - 1), so the
  // exemplars nearest the target weigh most.
  double prompt_recency = 1.0;

  void validate() const {
    if (order < 1) throw Error(ErrorCode::BadConfig, "n-gram order must be >= 1");
    if (!(discount > 0.0 && discount < 1.0)) throw Error(ErrorCode::BadConfig, "discount must be in (0,1)");
    if (prompt_mix < 0.0 || prompt_mix > 1.0) throw Error(ErrorCode::BadConfig, "prompt_mix must be in [0,1]");
    if (copy_boost < 0.0 || copy_boost > 1.0) throw Error(ErrorCode::BadConfig, "copy_boost must be in [0,1]");
    if (prompt_recency < 0.0) throw Error(ErrorCode::BadConfig, "prompt_recency must be >= 0");
  }
};

/// Weighted n-gram counts keyed by a 64-bit hash of the context.
class NGramCounts {
 public:
  struct Context {
    double total = 0;
    std::unordered_map<TokenId, double> next;
  };

  explicit NGramCounts(std::size_t order = 3) : order_(order) {}

  static std::uint64_t context_key(std::span<const TokenId> ctx) {
    std::uint64_t h = detail::mix64(ctx.size() + 0x4e474c4dULL);
    for (auto t : ctx) h = detail::combine(h, t);
    return h;
  }

  /// Counts every (context, token) pair of orders 1..order in the sequence.
  void add_sequence(std::span<const TokenId> seq, double weight = 1.0) {
    for (std::size_t i = 1; i < seq.size(); ++i) {
      for (std::size_t len = 0; len < order_ && len <= i; ++len) {
        auto ctx = seq.subspan(i - len, len);
        add(context_key(ctx), seq[i], weight);
      }
    }
  }

  void add(std::uint64_t key, TokenId token, double count) {
    auto& c = table_[key];
    c.total += count;
    c.next[token] += count;
    if (token >= max_token_) max_token_ = token + 1;
  }

  const Context* find(std::span<const TokenId> ctx) const {
    auto it = table_.find(context_key(ctx));
    return it == table_.end() ? nullptr : &it->second;
  }

  /// Interpolated absolute discounting from the longest available context
  /// down to a uniform floor over `extent` tokens.
  std::vector<double> distribution(std::span<const TokenId> history, std::size_t extent, double discount) const {
    std::vector<double> p(extent, 1.0 / static_cast<double>(extent));
    std::size_t max_len = std::min(order_ - 1, history.size());
    for (std::size_t len = 0; len <= max_len; ++len) {
      const Context* c = find(history.subspan(history.size() - len, len));
      if (!c || c->total <= 0) continue;
      double types = static_cast<double>(c->next.size());
      double backoff = std::min(1.0, discount * types / c->total);
      for (double& v : p) v *= backoff;
      for (const auto& [t, n] : c->next)
        if (t < extent) p[t] += std::max(n - discount, 0.0) / c->total;
    }
    return p;
  }

  std::size_t order() const { return order_; }
  std::size_t max_token() const { return max_token_; }
  const std::unordered_map<std::uint64_t, Context>& table() const { return table_; }
  bool empty() const { return table_.empty(); }

 private:
  std::size_t order_;
  std::size_t max_token_ = 0;
  std::unordered_map<std::uint64_t, Context> table_;
};

namespace detail {

inline std::vector<TokenId> training_sequence(std::span<const TokenId> utterance, std::span<const TokenId> api) {
  std::vector<TokenId> seq;
  seq.reserve(utterance.size() + api.size() + 3);
  seq.push_back(tok::kBos);
  seq.insert(seq.end(), utterance.begin(), utterance.end());
  seq.push_back(tok::kSep);
  seq.insert(seq.end(), api.begin(), api.end());
  seq.push_back(tok::kEos);
  return seq;
}

template <class T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw Error(ErrorCode::CorruptStore, "truncated file");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace detail

class NGramLM final : public LanguageModel {
 public:
  struct TrainingPair {
    std::vector<TokenId> utterance;
    std::vector<TokenId> api;
  };

  static NGramLM train(std::span<const TrainingPair> corpus, std::size_t vocab_size, NGramLMConfig cfg = {}) {
    cfg.validate();
    if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot train on an empty corpus");
    NGramLM lm(cfg, vocab_size);
    for (const auto& ex : corpus) lm.counts_.add_sequence(detail::training_sequence(ex.utterance, ex.api));
    return lm;
  }

  const NGramLMConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  const NGramCounts& counts() const { return counts_; }

  /// Copy of the model with different mixing weights.
  NGramLM with_mixing(double prompt_mix, double copy_boost) const {
    NGramLM lm = *this;
    lm.cfg_.prompt_mix = prompt_mix;
    lm.cfg_.copy_boost = copy_boost;
    lm.cfg_.validate();
    return lm;
  }

  TokenDistribution next_dist(const Prompt& prompt, std::span<const TokenId> utterance,
                              std::span<const TokenId> prefix) const override {
    const std::size_t extent = prompt.vocab_extent;
    check_extent(prompt, utterance, prefix);

    std::vector<TokenId> history;
    history.reserve(utterance.size() + prefix.size() + 2);
    history.push_back(tok::kBos);
    history.insert(history.end(), utterance.begin(), utterance.end());
    history.push_back(tok::kSep);
    history.insert(history.end(), prefix.begin(), prefix.end());
    std::size_t keep = std::min(history.size(), cfg_.order - 1);
    std::span<const TokenId> ctx(history.data() + history.size() - keep, keep);

    std::vector<double> p = counts_.distribution(ctx, extent, cfg_.discount);

    const bool has_prompt = !prompt.exemplar_ids.empty() || !prompt.doc_ids.empty();
    if (cfg_.prompt_mix > 0.0 && has_prompt) {
      NGramCounts eph = prompt_counts(prompt);
      std::vector<double> q = eph.distribution(ctx, extent, cfg_.discount);
      const double a = cfg_.prompt_mix;
      for (std::size_t i = 0; i < extent; ++i) p[i] = (1.0 - a) * p[i] + a * q[i];
    }

    if (cfg_.copy_boost > 0.0 && !utterance.empty() && inside_quote(prefix)) {
      const bool span_started = prefix.back() != tok::kQuote;
      std::vector<TokenId> types(utterance.begin(), utterance.end());
      if (span_started) types.push_back(tok::kQuote);
      std::sort(types.begin(), types.end());
      types.erase(std::unique(types.begin(), types.end()), types.end());
      std::vector<double> copy(extent, 0.0);
      for (auto t : types) copy[t] = 1.0 / static_cast<double>(types.size());
      const double b = cfg_.copy_boost;
      for (std::size_t i = 0; i < extent; ++i) p[i] = (1.0 - b) * p[i] + b * copy[i];
    }

    TokenDistribution d(std::move(p));
    d.normalize();
    return d;
  }

  /// True when the prefix has an unmatched opening quote.
  static bool inside_quote(std::span<const TokenId> prefix) {
    std::size_t quotes = 0;
    for (auto t : prefix) quotes += (t == tok::kQuote);
    return quotes % 2 == 1;
  }

  // Binary layout (little-endian): "NGLM", u32 version, u32 order,
  // u32 vocab size, u64 triple count, then (u64 context hash, u32 token,
  // f64 count) triples.
  static constexpr std::uint32_t kVersion = 1;

  std::string to_bytes() const {
    std::string out = "NGLM";
    detail::put<std::uint32_t>(out, kVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_.order));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_size_));
    std::uint64_t n = 0;
    for (const auto& [k, c] : counts_.table()) n += c.next.size();
    detail::put<std::uint64_t>(out, n);
    // Sorted for byte-stable output.
    std::vector<std::tuple<std::uint64_t, TokenId, double>> triples;
    triples.reserve(n);
    for (const auto& [k, c] : counts_.table())
      for (const auto& [t, v] : c.next) triples.emplace_back(k, t, v);
    std::sort(triples.begin(), triples.end());
    for (const auto& [k, t, v] : triples) {
      detail::put<std::uint64_t>(out, k);
      detail::put<std::uint32_t>(out, t);
      detail::put<double>(out, v);
    }
    return out;
  }

  static NGramLM from_bytes(const std::string& bytes, NGramLMConfig cfg = {}) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "NGLM") != 0) throw Error(ErrorCode::CorruptStore, "bad magic");
    std::size_t off = 4;
    auto version = detail::take<std::uint32_t>(bytes, off);
    if (version != kVersion) throw Error(ErrorCode::VersionMismatch, "unsupported model version");
    cfg.order = detail::take<std::uint32_t>(bytes, off);
    cfg.validate();
    auto vocab = detail::take<std::uint32_t>(bytes, off);
    auto n = detail::take<std::uint64_t>(bytes, off);
    if (n > (bytes.size() - off) / 20) throw Error(ErrorCode::CorruptStore, "triple count exceeds file size");
    NGramLM lm(cfg, vocab);
    for (std::uint64_t i = 0; i < n; ++i) {
      auto k = detail::take<std::uint64_t>(bytes, off);
      auto t = detail::take<std::uint32_t>(bytes, off);
      auto v = detail::take<double>(bytes, off);
      lm.counts_.add(k, t, v);
    }
    if (off != bytes.size()) throw Error(ErrorCode::CorruptStore, "trailing bytes");
    return lm;
  }

  void save(const std::string& path) const { detail::write_file(path, to_bytes()); }
  static NGramLM load(const std::string& path, NGramLMConfig cfg = {}) {
    return from_bytes(detail::read_file(path), cfg);
  }

 private:
  NGramLM(NGramLMConfig cfg, std::size_t vocab_size) : cfg_(cfg), vocab_size_(vocab_size), counts_(cfg.order) {}

  void check_extent(const Prompt& prompt, std::span<const TokenId> utterance, std::span<const TokenId> prefix) const {
    const std::size_t extent = prompt.vocab_extent;
    if (extent < vocab_size_ || extent < tok::kNumReserved)
      throw Error(ErrorCode::VocabMismatch, "prompt vocabulary is smaller than the model's");
    auto check = [&](std::span<const TokenId> ids) {
      for (auto t : ids)
        if (t >= extent) throw Error(ErrorCode::VocabMismatch, "token id outside the prompt vocabulary");
    };
    check(utterance);
    check(prefix);
    check(prompt.doc_ids);
    for (const auto& e : prompt.exemplar_ids) check(e);
  }

  NGramCounts prompt_counts(const Prompt& prompt) const {
    NGramCounts eph(cfg_.order);
    if (!prompt.doc_ids.empty()) {
      std::vector<TokenId> seq{tok::kBos};
      seq.insert(seq.end(), prompt.doc_ids.begin(), prompt.doc_ids.end());
      eph.add_sequence(seq);
    }
    const std::size_t m = prompt.exemplar_ids.size();
    std::vector<TokenId> seq;
    for (std::size_t i = 0; i < m; ++i) {
      double w = 1.0 + (m > 1 ? cfg_.prompt_recency * static_cast<double>(i) / static_cast<double>(m - 1) : 0.0);
      seq.assign(1, tok::kBos);
      seq.insert(seq.end(), prompt.exemplar_ids[i].begin(), prompt.exemplar_ids[i].end());
      eph.add_sequence(seq, w);
    }
    if (m > 0) {
      seq.assign(1, tok::kBos);
      seq.insert(seq.end(), prompt.target_ids.begin(), prompt.target_ids.end());
      eph.add_sequence(seq, 1.0 + cfg_.prompt_recency);
    }
    return eph;
  }

  NGramLMConfig cfg_;
  std::size_t vocab_size_;
  NGramCounts counts_;
};

}  // namespace knnicl
