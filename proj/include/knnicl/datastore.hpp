#pragma once

// Token-level retrieval datastore: (context vector, next label token)
// records, exact and IVF search, and the temperature-flattened neighbor
// distribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "knnicl/detail/hash.hpp"
#include "knnicl/distribution.hpp"
#include "knnicl/error.hpp"
#include "knnicl/lm.hpp"
#include "knnicl/textcore.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

enum class RecordFilter : std::uint8_t { LabelsOnly = 0, AllTokens = 1 };

struct Neighbor {
  double distance = 0;  // squared L2
  TokenId value = 0;
  std::uint64_t index = 0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Ascending by (distance, record index).
struct NeighborSet {
  std::vector<Neighbor> entries;
  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  friend bool operator==(const NeighborSet&, const NeighborSet&) = default;
};

enum class IndexKind { Exact, Ivf };

struct KnnConfig {
  std::size_t k = 20;
  double temperature = 100.0;
  IndexKind index = IndexKind::Exact;
  std::size_t n_lists = 0;  // 0: ceil(sqrt(N))
  std::size_t n_probe = 0;  // 0: max(1, n_lists / 4)

  void validate() const {
    if (k < 1) throw Error(ErrorCode::BadConfig, "k must be >= 1");
    if (!(temperature > 0.0)) throw Error(ErrorCode::BadConfig, "temperature must be > 0");
    if (n_lists && n_probe > n_lists) throw Error(ErrorCode::BadConfig, "n_probe must not exceed n_lists");
  }
};

struct DatastoreExample {
  std::string utterance;
  ApiCall gold;
};

class Datastore {
 public:
  Datastore() = default;
  Datastore(std::size_t dim, RecordFilter filter, detail::Digest encoder_fp, detail::Digest vocab_fp)
      : dim_(dim), filter_(filter), encoder_fp_(encoder_fp), vocab_fp_(vocab_fp) {}

  void append(const ContextVector& key, TokenId value) {
    if (key.dim() != dim_) throw Error(ErrorCode::DimensionMismatch, "key dimension differs from store");
    keys_.insert(keys_.end(), key.values.begin(), key.values.end());
    values_.push_back(value);
  }

  std::size_t size() const { return values_.size(); }
  std::size_t dim() const { return dim_; }
  RecordFilter filter() const { return filter_; }
  const detail::Digest& encoder_fingerprint() const { return encoder_fp_; }
  const detail::Digest& vocab_fingerprint() const { return vocab_fp_; }
  std::span<const float> key(std::size_t i) const { return {keys_.data() + i * dim_, dim_}; }
  TokenId value(std::size_t i) const { return values_[i]; }
  const std::vector<float>& keys() const { return keys_; }
  const std::vector<TokenId>& values() const { return values_; }

  /// Bitwise comparison of keys (so -0.0f and 0.0f differ).
  friend bool operator==(const Datastore& a, const Datastore& b) {
    return a.dim_ == b.dim_ && a.filter_ == b.filter_ && a.encoder_fp_ == b.encoder_fp_ &&
           a.vocab_fp_ == b.vocab_fp_ && a.values_ == b.values_ && a.keys_.size() == b.keys_.size() &&
           std::memcmp(a.keys_.data(), b.keys_.data(), a.keys_.size() * sizeof(float)) == 0;
  }

  // File layout (little-endian): "KNNI", u32 version, u32 d, u64 N,
  // u8 filter, 32-byte encoder fingerprint, 32-byte vocabulary fingerprint,
  // N*d f32 keys (row-major), N u32 values, u32 CRC32 of all preceding bytes.
  // Distances are squared Euclidean.
  static constexpr std::uint32_t kVersion = 1;

  std::string to_bytes() const {
    std::string out = "KNNI";
    detail::put<std::uint32_t>(out, kVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    detail::put<std::uint64_t>(out, values_.size());
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(filter_));
    out.append(reinterpret_cast<const char*>(encoder_fp_.data()), encoder_fp_.size());
    out.append(reinterpret_cast<const char*>(vocab_fp_.data()), vocab_fp_.size());
    out.append(reinterpret_cast<const char*>(keys_.data()), keys_.size() * sizeof(float));
    out.append(reinterpret_cast<const char*>(values_.data()), values_.size() * sizeof(TokenId));
    auto crc = detail::crc32({reinterpret_cast<const std::uint8_t*>(out.data()), out.size()});
    detail::put<std::uint32_t>(out, crc);
    return out;
  }

  static Datastore from_bytes(const std::string& bytes) {
    constexpr std::size_t kHeader = 4 + 4 + 4 + 8 + 1 + 32 + 32;
    if (bytes.size() < kHeader + 4) throw Error(ErrorCode::CorruptStore, "file too short");
    std::size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (detail::crc32({reinterpret_cast<const std::uint8_t*>(bytes.data()), body}) != stored)
      throw Error(ErrorCode::CorruptStore, "checksum mismatch");
    if (bytes.compare(0, 4, "KNNI") != 0) throw Error(ErrorCode::CorruptStore, "bad magic");
    std::size_t off = 4;
    if (detail::take<std::uint32_t>(bytes, off) != kVersion)
      throw Error(ErrorCode::VersionMismatch, "unsupported datastore version");
    Datastore s;
    s.dim_ = detail::take<std::uint32_t>(bytes, off);
    auto n = detail::take<std::uint64_t>(bytes, off);
    auto filter = detail::take<std::uint8_t>(bytes, off);
    if (filter > 1) throw Error(ErrorCode::CorruptStore, "bad filter mode");
    s.filter_ = static_cast<RecordFilter>(filter);
    std::memcpy(s.encoder_fp_.data(), bytes.data() + off, 32);
    std::memcpy(s.vocab_fp_.data(), bytes.data() + off + 32, 32);
    off += 64;
    if (s.dim_ == 0 || n > (body - off) / (s.dim_ * sizeof(float) + sizeof(TokenId)) ||
        off + n * (s.dim_ * sizeof(float) + sizeof(TokenId)) != body)
      throw Error(ErrorCode::CorruptStore, "record count does not match file size");
    s.keys_.resize(n * s.dim_);
    std::memcpy(s.keys_.data(), bytes.data() + off, s.keys_.size() * sizeof(float));
    off += s.keys_.size() * sizeof(float);
    s.values_.resize(n);
    std::memcpy(s.values_.data(), bytes.data() + off, n * sizeof(TokenId));
    return s;
  }

  void save(const std::string& path) const { detail::write_file(path, to_bytes()); }
  static Datastore load(const std::string& path) { return from_bytes(detail::read_file(path)); }

 private:
  std::size_t dim_ = 0;
  RecordFilter filter_ = RecordFilter::LabelsOnly;
  detail::Digest encoder_fp_{};
  detail::Digest vocab_fp_{};
  std::vector<float> keys_;
  std::vector<TokenId> values_;
};

/// Positions of intent and slot names in a serialized API token stream:
/// non-structural tokens outside quoted spans.
inline std::vector<bool> label_positions(std::span<const std::string> api_tokens) {
  std::vector<bool> out(api_tokens.size(), false);
  bool quoted = false;
  for (std::size_t i = 0; i < api_tokens.size(); ++i) {
    const auto& t = api_tokens[i];
    if (t == "\"") {
      quoted = !quoted;
    } else if (!quoted && !(t.size() == 1 && detail::is_structural(t[0]))) {
      out[i] = true;
    }
  }
  return out;
}

/// One record per admitted target position j of each gold API:
/// key = encode(utterance, api[0..j)), value = api[j].
inline Datastore build_datastore(std::span<const DatastoreExample> examples, const ContextEncoder& encoder,
                                 const Vocabulary& vocab, RecordFilter filter = RecordFilter::LabelsOnly) {
  if (examples.empty()) throw Error(ErrorCode::EmptyInput, "no examples for the datastore");
  Datastore store(encoder.dim(), filter, encoder.fingerprint(), vocab.fingerprint());
  for (const auto& ex : examples) {
    auto utt = detail::split_structural(ex.utterance);
    auto api = detail::split_structural(serialize_api(ex.gold));
    auto labels = label_positions(api);
    for (std::size_t j = 0; j < api.size(); ++j) {
      if (filter == RecordFilter::LabelsOnly && !labels[j]) continue;
      auto id = vocab.find(api[j]);
      if (!id) throw Error(ErrorCode::VocabMismatch, "API token '" + api[j] + "' missing from vocabulary");
      ContextVector key = encoder.encode(utt, std::span<const std::string>(api.data(), j));
      if (key.dim() != encoder.dim()) throw Error(ErrorCode::EncoderMismatch, "encoder output has wrong dimension");
      store.append(key, *id);
    }
  }
  return store;
}

inline void check_compatible(const Datastore& store, const ContextEncoder& encoder, const Vocabulary& vocab) {
  if (store.encoder_fingerprint() != encoder.fingerprint())
    throw Error(ErrorCode::FingerprintMismatch, "datastore was built with a different encoder");
  if (store.vocab_fingerprint() != vocab.fingerprint())
    throw Error(ErrorCode::FingerprintMismatch, "datastore was built with a different vocabulary");
}

inline double squared_l2(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s;
}

namespace detail {

struct NeighborOrder {
  bool operator()(const Neighbor& a, const Neighbor& b) const {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  }
};

/// Keeps the k best under NeighborOrder.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}
  void push(const Neighbor& n) {
    if (heap_.size() < k_) {
      heap_.push(n);
    } else if (NeighborOrder{}(n, heap_.top())) {
      heap_.pop();
      heap_.push(n);
    }
  }
  NeighborSet take() {
    NeighborSet out;
    out.entries.resize(heap_.size());
    for (std::size_t i = heap_.size(); i-- > 0;) {
      out.entries[i] = heap_.top();
      heap_.pop();
    }
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<Neighbor, std::vector<Neighbor>, NeighborOrder> heap_;
};

}  // namespace detail

/// Exhaustive search; ties broken by ascending record index.
inline NeighborSet query_exact(const Datastore& store, const ContextVector& q, std::size_t k) {
  if (q.dim() != store.dim()) throw Error(ErrorCode::DimensionMismatch, "query dimension differs from store");
  detail::TopK top(k);
  for (std::size_t i = 0; i < store.size(); ++i) top.push({squared_l2(q.values, store.key(i)), store.value(i), i});
  return top.take();
}

/// Inverted-file index: k-means coarse quantizer, exact scan of the
/// `n_probe` nearest lists.
class IvfIndex {
 public:
  IvfIndex(const Datastore& store, std::size_t n_lists = 0, std::uint64_t seed = 17, std::size_t iterations = 12)
      : store_(&store) {
    const std::size_t n = store.size();
    const std::size_t d = store.dim();
    if (n == 0) return;
    if (n_lists == 0) n_lists = static_cast<std::size_t>(std::ceil(std::sqrt(double(n))));
    n_lists = std::min(n_lists, n);
    std::mt19937_64 rng(seed);
    centroids_.assign(n_lists * d, 0.0f);

    // k-means++ seeding
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t first = detail::uniform_index(rng, n);
    std::copy_n(store.key(first).begin(), d, centroids_.begin());
    for (std::size_t c = 1; c < n_lists; ++c) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        best[i] = std::min(best[i], squared_l2(store.key(i), centroid(c - 1)));
        total += best[i];
      }
      double r = detail::uniform_real(rng) * total;
      std::size_t pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= best[i];
        if (r <= 0) {
          pick = i;
          break;
        }
      }
      std::copy_n(store.key(pick).begin(), d, centroids_.begin() + static_cast<std::ptrdiff_t>(c * d));
    }

    std::vector<std::size_t> assign(n, 0);
    for (std::size_t it = 0; it < iterations; ++it) {
      for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_centroid(store.key(i));
      std::vector<double> sums(n_lists * d, 0.0);
      std::vector<std::size_t> counts(n_lists, 0);
      for (std::size_t i = 0; i < n; ++i) {
        auto key = store.key(i);
        ++counts[assign[i]];
        for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += key[j];
      }
      for (std::size_t c = 0; c < n_lists; ++c) {
        if (counts[c] == 0) continue;  // keep the previous centroid
        for (std::size_t j = 0; j < d; ++j) centroids_[c * d + j] = static_cast<float>(sums[c * d + j] / counts[c]);
      }
    }
    lists_.assign(n_lists, {});
    for (std::size_t i = 0; i < n; ++i) lists_[nearest_centroid(store.key(i))].push_back(i);
  }

  std::size_t n_lists() const { return lists_.size(); }

  NeighborSet query(const ContextVector& q, std::size_t k, std::size_t n_probe = 0) const {
    if (q.dim() != store_->dim()) throw Error(ErrorCode::DimensionMismatch, "query dimension differs from store");
    if (lists_.empty()) return {};
    if (n_probe == 0) n_probe = std::max<std::size_t>(1, lists_.size() / 4);
    n_probe = std::min(n_probe, lists_.size());
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(lists_.size());
    for (std::size_t c = 0; c < lists_.size(); ++c) order.emplace_back(squared_l2(q.values, centroid(c)), c);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_probe), order.end());
    detail::TopK top(k);
    for (std::size_t p = 0; p < n_probe; ++p)
      for (std::size_t i : lists_[order[p].second])
        top.push({squared_l2(q.values, store_->key(i)), store_->value(i), i});
    return top.take();
  }

 private:
  std::span<const float> centroid(std::size_t c) const {
    return {centroids_.data() + c * store_->dim(), store_->dim()};
  }
  std::size_t nearest_centroid(std::span<const float> v) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c * store_->dim() < centroids_.size(); ++c) {
      double dd = squared_l2(v, centroid(c));
      if (dd < bd) bd = dd, best = c;
    }
    return best;
  }

  const Datastore* store_;
  std::vector<float> centroids_;
  std::vector<std::vector<std::size_t>> lists_;
};

/// Query front end bound to one store. Verifies the store's fingerprints
/// once and builds the IVF index when requested.
class KnnRetriever {
 public:
  KnnRetriever(const Datastore& store, const ContextEncoder& encoder, const Vocabulary& vocab,
               IndexKind index = IndexKind::Exact, std::size_t n_lists = 0, std::size_t n_probe = 0)
      : store_(&store), n_probe_(n_probe) {
    check_compatible(store, encoder, vocab);
    if (index == IndexKind::Ivf) ivf_.emplace(store, n_lists);
  }

  const Datastore& store() const { return *store_; }

  NeighborSet query(const ContextVector& q, std::size_t k) const {
    if (k < 1) throw Error(ErrorCode::BadConfig, "k must be >= 1");
    if (ivf_) return ivf_->query(q, k, n_probe_);
    return query_exact(*store_, q, k);
  }

 private:
  const Datastore* store_;
  std::size_t n_probe_;
  std::optional<IvfIndex> ivf_;
};

/// One-shot query. IVF mode builds a throwaway index; use KnnRetriever
/// for repeated IVF queries.
inline NeighborSet query(const Datastore& store, const ContextVector& q, const KnnConfig& cfg) {
  cfg.validate();
  if (cfg.index == IndexKind::Ivf) return IvfIndex(store, cfg.n_lists).query(q, cfg.k, cfg.n_probe);
  return query_exact(store, q, cfg.k);
}

/// p(v) proportional to the sum over neighbors with value v of
/// exp(-distance / temperature). Shifted by the minimum distance, which
/// cancels in the normalization.
inline TokenDistribution knn_distribution(const NeighborSet& neighbors, double temperature, std::size_t vocab_size) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyNeighborSet, "no neighbors retrieved");
  if (!(temperature > 0.0)) throw Error(ErrorCode::BadConfig, "temperature must be > 0");
  double dmin = neighbors.entries.front().distance;
  for (const auto& n : neighbors.entries) dmin = std::min(dmin, n.distance);
  TokenDistribution p(vocab_size);
  double z = 0;
  for (const auto& n : neighbors.entries) {
    if (n.value >= vocab_size) throw Error(ErrorCode::VocabMismatch, "neighbor value outside vocabulary");
    double w = std::exp(-(n.distance - dmin) / temperature);
    p.probs[n.value] += w;
    z += w;
  }
  for (double& v : p.probs) v /= z;
  return p;
}

}  // namespace knnicl
