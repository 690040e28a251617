#pragma once

// Interpolated greedy decoding: p = lambda * p_knn + (1 - lambda) * p_lm
// over the full vocabulary, with ICL, kNN-LM and kNN-ICL as special cases.

#include <nlohmann/json.hpp>

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "knnicl/datastore.hpp"
#include "knnicl/distribution.hpp"
#include "knnicl/error.hpp"
#include "knnicl/lm.hpp"
#include "knnicl/prompt.hpp"
#include "knnicl/textcore.hpp"

namespace knnicl {

enum class Mode { Icl, KnnLm, KnnIcl };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Icl: return "icl";
    case Mode::KnnLm: return "knn-lm";
    case Mode::KnnIcl: return "knn-icl";
  }
  return "?";
}

struct DecoderConfig {
  double lambda = 0.0;
  std::optional<KnnConfig> knn;
  std::size_t max_len = 128;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw Error(ErrorCode::BadConfig, "lambda must be in [0,1]");
    if (max_len < 4) throw Error(ErrorCode::BadConfig, "max_len must be >= 4");
    if (knn) knn->validate();
  }
};

/// Retrieval side of a decode: the datastore searcher plus the encoder
/// that turns (target utterance, prefix) into queries.
struct KnnSource {
  const KnnRetriever& retriever;
  const ContextEncoder& encoder;
};

inline Mode decode_mode(const DecoderConfig& cfg, const Prompt& prompt, const KnnSource* knn) {
  if (cfg.lambda == 0.0 || !knn || !cfg.knn) return Mode::Icl;
  return prompt.exemplar_ids.empty() ? Mode::KnnLm : Mode::KnnIcl;
}

struct StepResult {
  TokenDistribution p;
  TokenDistribution p_lm;
  std::optional<TokenDistribution> p_knn;
  NeighborSet neighbors;
  bool knn_fallback = false;  // retrieval requested but nothing retrieved
};

/// Elementwise lambda * a + (1 - lambda) * b.
inline TokenDistribution interpolate(double lambda, const TokenDistribution& knn, const TokenDistribution& lm) {
  TokenDistribution out(lm.size());
  for (std::size_t i = 0; i < lm.size(); ++i) out.probs[i] = lambda * knn.probs[i] + (1.0 - lambda) * lm.probs[i];
  return out;
}

inline StepResult step_distribution(const LanguageModel& lm, const KnnSource* knn, const DecoderConfig& cfg,
                                    const Prompt& prompt, const SessionVocab& vocab, std::span<const TokenId> prefix) {
  StepResult r;
  r.p_lm = lm.next_dist(prompt, prompt.target_ids, prefix);
  if (cfg.lambda == 0.0 || !knn || !cfg.knn) {
    r.p = r.p_lm;
    return r;
  }
  if (knn->retriever.store().size() == 0) {
    r.knn_fallback = true;
    r.p = r.p_lm;
    return r;
  }
  ContextVector q = encode_context(knn->encoder, vocab, prompt.target_ids, prefix);
  r.neighbors = knn->retriever.query(q, cfg.knn->k);
  if (r.neighbors.empty()) {
    r.knn_fallback = true;
    r.p = r.p_lm;
    return r;
  }
  r.p_knn = knn_distribution(r.neighbors, cfg.knn->temperature, prompt.vocab_extent);
  r.p = interpolate(cfg.lambda, *r.p_knn, r.p_lm);
  return r;
}

struct StepRecord {
  std::size_t step = 0;
  TokenId chosen = 0;
  std::string chosen_surface;
  std::vector<std::pair<std::string, double>> top5_lm;
  std::vector<std::pair<std::string, double>> top5_knn;
  std::vector<double> neighbor_distances;
  bool knn_fallback = false;
};

struct DecodeTrace {
  std::vector<StepRecord> steps;
  bool truncated = false;

  /// One JSON object per step: {step, chosen, top5_lm, top5_knn,
  /// neighbor_distances}; `note` marks fallbacks and truncation.
  void write_jsonl(std::ostream& os) const {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& s = steps[i];
      nlohmann::json j;
      j["step"] = s.step;
      j["chosen"] = s.chosen_surface;
      j["top5_lm"] = s.top5_lm;
      j["top5_knn"] = s.top5_knn;
      j["neighbor_distances"] = s.neighbor_distances;
      if (s.knn_fallback) j["note"] = "knn-fallback";
      if (truncated && i + 1 == steps.size()) j["note"] = "truncated";
      os << j.dump() << '\n';
    }
  }
};

/// `trace.steps` has one record per emitted token, including a final EOS
/// when `ended_on_eos`; `tokens` and `api` exclude the EOS.
struct DecodeResult {
  std::string api;
  std::vector<TokenId> tokens;
  DecodeTrace trace;
  bool ended_on_eos = false;
};

namespace detail {

inline std::vector<std::pair<std::string, double>> named_top(const TokenDistribution& d, const SessionVocab& vocab,
                                                             std::size_t n) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [id, p] : d.top(n)) out.emplace_back(vocab.surface(id), p);
  return out;
}

/// Tracks parenthesis depth outside quoted spans.
class StructureTracker {
 public:
  void push(TokenId t) {
    if (t == tok::kQuote) {
      quoted_ = !quoted_;
    } else if (!quoted_ && t == tok::kLParen) {
      ++depth_;
      opened_ = true;
    } else if (!quoted_ && t == tok::kRParen) {
      --depth_;
    }
  }
  bool complete() const { return opened_ && depth_ <= 0; }

 private:
  int depth_ = 0;
  bool opened_ = false;
  bool quoted_ = false;
};

}  // namespace detail

/// Greedy argmax decoding (ties to the lowest id). Stops on EOS, when the
/// outermost call closes, or at max_len; a truncated output is still
/// returned.
inline DecodeResult decode_greedy(const LanguageModel& lm, const KnnSource* knn, const DecoderConfig& cfg,
                                  const Prompt& prompt, const SessionVocab& vocab) {
  cfg.validate();
  DecodeResult out;
  detail::StructureTracker structure;
  while (true) {
    if (out.tokens.size() >= cfg.max_len) {
      out.trace.truncated = true;
      break;
    }
    StepResult step = step_distribution(lm, knn, cfg, prompt, vocab, out.tokens);
    TokenId next = step.p.argmax();

    StepRecord rec;
    rec.step = out.trace.steps.size();
    rec.chosen = next;
    rec.chosen_surface = vocab.surface(next);
    rec.top5_lm = detail::named_top(step.p_lm, vocab, 5);
    if (step.p_knn) rec.top5_knn = detail::named_top(*step.p_knn, vocab, 5);
    for (const auto& n : step.neighbors.entries) rec.neighbor_distances.push_back(n.distance);
    rec.knn_fallback = step.knn_fallback;
    out.trace.steps.push_back(std::move(rec));

    if (next == tok::kEos) {
      out.ended_on_eos = true;
      break;
    }
    out.tokens.push_back(next);
    structure.push(next);
    if (structure.complete()) break;
  }
  out.api = detokenize(vocab, out.tokens);
  return out;
}

}  // namespace knnicl
