#pragma once

// Splits, pipeline assembly, grid-searched experiments and reports.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "knnicl/corpus.hpp"
#include "knnicl/datastore.hpp"
#include "knnicl/decode.hpp"
#include "knnicl/detail/hash.hpp"
#include "knnicl/lm.hpp"
#include "knnicl/prompt.hpp"
#include "knnicl/selection.hpp"
#include "knnicl/textcore.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

// ---------------------------------------------------------------------------
// Splits

struct SpisSplit {
  std::vector<std::size_t> pool;       // corpus positions, in admission order
  std::vector<std::size_t> remainder;  // corpus positions, ascending
};

/// Greedy pass over a seed-shuffled corpus: a record is admitted iff at
/// least one of its intent/slot labels has been admitted fewer than `n`
/// times so far. Intent and slot labels share one quota table.
inline SpisSplit make_spis_split(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::BadConfig, "SPIS quota must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  detail::shuffle(order, rng);
  std::map<std::string, std::size_t> counts;
  SpisSplit out;
  std::vector<bool> admitted(corpus.size(), false);
  for (auto i : order) {
    auto labels = tree_labels(corpus.records[i].tree);
    bool under = std::any_of(labels.begin(), labels.end(), [&](const auto& l) { return counts[l] < n; });
    if (!under) continue;
    for (const auto& l : labels) ++counts[l];
    out.pool.push_back(i);
    admitted[i] = true;
  }
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!admitted[i]) out.remainder.push_back(i);
  return out;
}

/// Replays an admission sequence; true iff every admitted record had some
/// label under quota when it was admitted.
inline bool audit_spis(const Corpus& corpus, const std::vector<std::size_t>& admission_order, std::size_t n) {
  std::map<std::string, std::size_t> counts;
  for (auto i : admission_order) {
    auto labels = tree_labels(corpus.records.at(i).tree);
    bool under = std::any_of(labels.begin(), labels.end(), [&](const auto& l) { return counts[l] < n; });
    if (!under) return false;
    for (const auto& l : labels) ++counts[l];
  }
  return true;
}

/// Uniform draw of `size` corpus positions without replacement.
inline std::vector<std::size_t> sample_pool(const Corpus& corpus, std::size_t size, std::uint64_t seed) {
  if (size > corpus.size())
    throw Error(ErrorCode::PoolTooLarge,
                "pool size " + std::to_string(size) + " exceeds corpus size " + std::to_string(corpus.size()));
  std::mt19937_64 rng(seed);
  return detail::sample_without_replacement(corpus.size(), size, rng);
}

/// Record ids (as stored in the corpus) for replayable manifests.
inline std::vector<std::size_t> manifest(const Corpus& corpus, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> ids;
  ids.reserve(positions.size());
  for (auto p : positions) ids.push_back(corpus.records.at(p).id);
  return ids;
}

// ---------------------------------------------------------------------------
// Pipeline

/// One line per intent/slot label: `NAME : gloss .` where the gloss is the
/// lower-cased label words.
inline std::string documentation_stub(const Corpus& corpus) {
  std::set<std::string> labels;
  for (const auto& r : corpus.records)
    for (const auto& l : tree_labels(r.tree)) labels.insert(l.substr(3));
  std::string doc;
  for (const auto& l : labels) {
    std::string gloss;
    for (char c : l) gloss.push_back(c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    doc += l + " : " + gloss + " .\n";
  }
  return doc;
}

struct PipelineOptions {
  EncoderConfig encoder;
  NGramLMConfig lm;
  RecordFilter filter = RecordFilter::LabelsOnly;
  IndexKind index = IndexKind::Exact;
  std::size_t neg_ratio = 5;
  std::uint64_t seed = 13;
  std::optional<std::string> documentation;  // prompt doc block, if any
};

/// Every component built from one demo pool: vocabulary, reference LM,
/// datastore and retriever, demo pool embeddings, paraphrase classifier.
/// Immutable after construction and safe to share across threads.
class Pipeline {
 public:
  Pipeline(const Corpus& pool, PipelineOptions opts) : opts_(std::move(opts)), encoder_(opts_.encoder) {
    if (pool.records.empty()) throw Error(ErrorCode::EmptyInput, "empty demo pool");
    std::vector<NGramLM::TrainingPair> pairs;
    std::vector<DatastoreExample> examples;
    std::vector<PoolItem> items;
    for (const auto& r : pool.records) {
      ApiCall gold = tree_to_api(r.tree);
      std::string api = serialize_api(gold);
      NGramLM::TrainingPair p{tokenize_interning(r.utterance, vocab_), tokenize_interning(api, vocab_)};
      pairs.push_back(std::move(p));
      examples.push_back({r.utterance, gold});
      items.push_back(DemoPool::make_item(r.utterance, gold));
    }
    lm_ = std::make_unique<NGramLM>(NGramLM::train(pairs, vocab_.size(), opts_.lm));
    store_ = std::make_unique<Datastore>(build_datastore(examples, encoder_, vocab_, opts_.filter));
    retriever_ = std::make_unique<KnnRetriever>(*store_, encoder_, vocab_, opts_.index);
    demos_ = std::make_unique<DemoPool>(std::move(items), encoder_);
    std::set<std::string> intents;
    for (const auto& it : demos_->items()) intents.insert(it.intent);
    if (intents.size() >= 2)
      classifier_ = train_pair_classifier(*demos_, build_pair_dataset(*demos_, opts_.neg_ratio, opts_.seed));
  }

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const Vocabulary& vocab() const { return vocab_; }
  const HashedNgramEncoder& encoder() const { return encoder_; }
  const NGramLM& lm() const { return *lm_; }
  const Datastore& store() const { return *store_; }
  const KnnRetriever& retriever() const { return *retriever_; }
  const DemoPool& demos() const { return *demos_; }
  const std::optional<PairClassifier>& classifier() const { return classifier_; }
  const PipelineOptions& options() const { return opts_; }

  /// Pool indices chosen for `target`, in prompt order.
  std::vector<std::size_t> select(const std::string& target, Strategy strategy, std::size_t m,
                                  std::uint64_t seed) const {
    SelectionConfig cfg{m, seed, strategy};
    std::vector<std::size_t> picked;
    switch (strategy) {
      case Strategy::Random: picked = select_random(*demos_, cfg); break;
      case Strategy::Similarity: picked = select_by_similarity(*demos_, target, encoder_, cfg); break;
      case Strategy::Paraphrase:
        if (!classifier_) throw Error(ErrorCode::DegeneratePool, "paraphrase selection needs two or more intents");
        picked = select_by_paraphrase(*demos_, target, encoder_, *classifier_, cfg);
        break;
    }
    return prompt_order(std::move(picked), strategy);
  }

  std::vector<Exemplar> exemplars(const std::vector<std::size_t>& picked) const {
    std::vector<Exemplar> out;
    for (auto i : picked) out.push_back({demos_->item(i).utterance, serialize_api(demos_->item(i).gold)});
    return out;
  }

  DecodeResult decode(const std::string& target, const std::vector<Exemplar>& exemplars,
                      const DecoderConfig& cfg) const {
    return decode(target, exemplars, cfg, *retriever_);
  }

  /// Decodes against another store (e.g. one loaded from disk); the
  /// retriever must have been checked against this pipeline's encoder and
  /// vocabulary.
  DecodeResult decode(const std::string& target, const std::vector<Exemplar>& exemplars, const DecoderConfig& cfg,
                      const KnnRetriever& retriever) const {
    SessionVocab session(vocab_);
    Prompt prompt = build_prompt(session, opts_.documentation, exemplars, target);
    KnnSource knn{retriever, encoder_};
    return decode_greedy(*lm_, &knn, cfg, prompt, session);
  }

 private:
  PipelineOptions opts_;
  Vocabulary vocab_;
  HashedNgramEncoder encoder_;
  std::unique_ptr<NGramLM> lm_;
  std::unique_ptr<Datastore> store_;
  std::unique_ptr<KnnRetriever> retriever_;
  std::unique_ptr<DemoPool> demos_;
  std::optional<PairClassifier> classifier_;
};

// ---------------------------------------------------------------------------
// Reports

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::Similarity: return "sim";
    case Strategy::Paraphrase: return "para";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::Random;
  if (s == "sim" || s == "similarity") return Strategy::Similarity;
  if (s == "para" || s == "paraphrase") return Strategy::Paraphrase;
  throw Error(ErrorCode::BadConfig, "unknown strategy '" + s + "'");
}

inline Mode parse_mode(const std::string& s) {
  if (s == "icl") return Mode::Icl;
  if (s == "knn-lm") return Mode::KnnLm;
  if (s == "knn-icl") return Mode::KnnIcl;
  throw Error(ErrorCode::BadConfig, "unknown mode '" + s + "'");
}

struct GridPoint {
  double lambda = 0.0;
  std::optional<double> temperature;
  std::optional<std::size_t> k;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct ExampleResult {
  std::size_t id = 0;
  std::string domain;
  std::string utterance;
  std::string gold;
  std::string prediction;
  int score = 0;
  std::optional<int> pred_depth;
  int gold_depth = 1;
  bool truncated = false;
  friend bool operator==(const ExampleResult&, const ExampleResult&) = default;
};

struct DepthRow {
  int depth = 1;
  std::size_t n = 0;
  double rate = 0;
  friend bool operator==(const DepthRow&, const DepthRow&) = default;
};

struct DomainRow {
  std::string domain;
  std::size_t n = 0;
  double rate = 0;
  friend bool operator==(const DomainRow&, const DomainRow&) = default;
};

struct GridScore {
  GridPoint point;
  double validation_em = 0;
  friend bool operator==(const GridScore&, const GridScore&) = default;
};

struct ExperimentReport {
  std::string mode;
  std::string strategy;
  std::size_t m = 0;
  GridPoint best;
  double validation_em = 0;
  double test_em = 0;
  std::vector<DomainRow> per_domain;
  std::vector<DepthRow> per_depth;
  std::vector<GridScore> grid;
  std::vector<std::size_t> validation_ids;
  std::vector<std::size_t> test_ids;
  double wall_clock_seconds = 0;
  std::vector<ExampleResult> examples;  // test slice
  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

inline void to_json(nlohmann::json& j, const GridPoint& g) {
  j = {{"lambda", g.lambda}};
  j["temperature"] = g.temperature ? nlohmann::json(*g.temperature) : nlohmann::json(nullptr);
  j["k"] = g.k ? nlohmann::json(*g.k) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, GridPoint& g) {
  g.lambda = j.at("lambda").get<double>();
  g.temperature = j.at("temperature").is_null() ? std::nullopt : std::optional<double>(j.at("temperature").get<double>());
  g.k = j.at("k").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("k").get<std::size_t>());
}

inline void to_json(nlohmann::json& j, const ExampleResult& r) {
  j = {{"id", r.id},           {"domain", r.domain}, {"utterance", r.utterance},   {"gold", r.gold},
       {"prediction", r.prediction}, {"score", r.score}, {"gold_depth", r.gold_depth}, {"truncated", r.truncated}};
  j["pred_depth"] = r.pred_depth ? nlohmann::json(*r.pred_depth) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, ExampleResult& r) {
  r.id = j.at("id").get<std::size_t>();
  r.domain = j.at("domain").get<std::string>();
  r.utterance = j.at("utterance").get<std::string>();
  r.gold = j.at("gold").get<std::string>();
  r.prediction = j.at("prediction").get<std::string>();
  r.score = j.at("score").get<int>();
  r.gold_depth = j.at("gold_depth").get<int>();
  r.truncated = j.at("truncated").get<bool>();
  r.pred_depth = j.at("pred_depth").is_null() ? std::nullopt : std::optional<int>(j.at("pred_depth").get<int>());
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DepthRow, depth, n, rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DomainRow, domain, n, rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GridScore, point, validation_em)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExperimentReport, mode, strategy, m, best, validation_em, test_em, per_domain,
                                   per_depth, grid, validation_ids, test_ids, wall_clock_seconds, examples)

/// Groups results by gold depth, ascending.
inline std::vector<DepthRow> depth_breakdown(const std::vector<ExampleResult>& results) {
  std::map<int, std::pair<std::size_t, std::size_t>> acc;  // depth -> (n, correct)
  for (const auto& r : results) {
    auto& [n, ok] = acc[r.gold_depth];
    ++n;
    ok += r.score;
  }
  std::vector<DepthRow> rows;
  for (const auto& [d, v] : acc) rows.push_back({d, v.first, double(v.second) / double(v.first)});
  return rows;
}

inline std::vector<DomainRow> domain_breakdown(const std::vector<ExampleResult>& results) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> acc;
  for (const auto& r : results) {
    auto& [n, ok] = acc[r.domain];
    ++n;
    ok += r.score;
  }
  std::vector<DomainRow> rows;
  for (const auto& [d, v] : acc) rows.push_back({d, v.first, double(v.second) / double(v.first)});
  return rows;
}

inline double exact_match_rate(const std::vector<ExampleResult>& results) {
  if (results.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : results) ok += r.score;
  return double(ok) / double(results.size());
}

inline ExampleResult score_example(const CorpusRecord& rec, const std::string& prediction, bool truncated = false) {
  ApiCall gold = tree_to_api(rec.tree);
  MatchResult m = exact_match(prediction, gold);
  return {rec.id, rec.domain, rec.utterance, serialize_api(gold), prediction, m.score, m.pred_depth, m.gold_depth,
          truncated};
}

// ---------------------------------------------------------------------------
// Experiments

struct Grid {
  std::vector<double> temperatures{50, 100, 200, 300, 400, 500};
  std::vector<double> lambdas{0.1, 0.3, 0.5, 0.7};
  std::vector<std::size_t> ks{20, 100, 1000};
};

/// Grid points for a mode. ICL ignores the retrieval knobs and collapses to
/// a single lambda = 0 point.
inline std::vector<GridPoint> enumerate_grid(const Grid& grid, Mode mode) {
  if (mode == Mode::Icl) return {GridPoint{0.0, std::nullopt, std::nullopt}};
  std::vector<GridPoint> out;
  for (double l : grid.lambdas)
    for (double t : grid.temperatures)
      for (std::size_t k : grid.ks) out.push_back({l, t, k});
  return out;
}

struct ExperimentSpec {
  Mode mode = Mode::KnnIcl;
  Strategy strategy = Strategy::Similarity;
  Grid grid;
  std::size_t m = 10;
  std::uint64_t seed = 7;
  double validation_fraction = 0.2;
  std::size_t max_len = 128;
  std::size_t workers = 1;
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline DecoderConfig decoder_config(const GridPoint& g, std::size_t max_len) {
  DecoderConfig cfg;
  cfg.lambda = g.lambda;
  cfg.max_len = max_len;
  if (g.temperature && g.k) {
    KnnConfig knn;
    knn.k = *g.k;
    knn.temperature = *g.temperature;
    cfg.knn = knn;
  }
  return cfg;
}

}  // namespace detail

/// Decodes `records` with per-record exemplars under one grid point.
inline std::vector<ExampleResult> evaluate_point(const Pipeline& pipe, const Corpus& eval,
                                                 const std::vector<std::size_t>& positions,
                                                 const std::vector<std::vector<Exemplar>>& exemplars,
                                                 const GridPoint& point, const ExperimentSpec& spec) {
  std::vector<ExampleResult> out(positions.size());
  DecoderConfig cfg = detail::decoder_config(point, spec.max_len);
  detail::parallel_for(positions.size(), spec.workers, [&](std::size_t i) {
    const auto& rec = eval.records[positions[i]];
    DecodeResult d = pipe.decode(rec.utterance, exemplars[positions[i]], cfg);
    out[i] = score_example(rec, d.api, d.trace.truncated);
  });
  return out;
}

/// Splits `eval` into validation (seeded `validation_fraction`) and test,
/// picks the grid point with the best validation exact match (first one on
/// ties) and reports test metrics under it.
inline ExperimentReport run_experiment(const Pipeline& pipe, const Corpus& eval, const ExperimentSpec& spec) {
  if (eval.records.empty()) throw Error(ErrorCode::EmptyInput, "empty evaluation corpus");
  auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(eval.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(spec.seed);
  detail::shuffle(order, rng);
  std::size_t n_val = static_cast<std::size_t>(std::ceil(spec.validation_fraction * double(eval.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, eval.size());
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (test.empty()) test = val;

  std::vector<std::vector<Exemplar>> exemplars(eval.size());
  if (spec.mode != Mode::KnnLm)
    for (std::size_t i = 0; i < eval.size(); ++i)
      exemplars[i] = pipe.exemplars(pipe.select(eval.records[i].utterance, spec.strategy, spec.m, spec.seed + i));

  ExperimentReport report;
  report.mode = to_string(spec.mode);
  report.strategy = spec.mode == Mode::KnnLm ? "none" : to_string(spec.strategy);
  report.m = spec.mode == Mode::KnnLm ? 0 : spec.m;
  report.validation_ids = manifest(eval, val);
  report.test_ids = manifest(eval, test);

  bool have_best = false;
  for (const auto& point : enumerate_grid(spec.grid, spec.mode)) {
    double em = exact_match_rate(evaluate_point(pipe, eval, val, exemplars, point, spec));
    report.grid.push_back({point, em});
    if (!have_best || em > report.validation_em) {
      report.best = point;
      report.validation_em = em;
      have_best = true;
    }
  }

  report.examples = evaluate_point(pipe, eval, test, exemplars, report.best, spec);
  report.test_em = exact_match_rate(report.examples);
  report.per_domain = domain_breakdown(report.examples);
  report.per_depth = depth_breakdown(report.examples);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Config files

/// Line-oriented `key = value`; `#` starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_config(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::BadRow, "expected 'key = value'", lineno);
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::BadRow, "empty key", lineno);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v;
    if (!(is >> v)) throw Error(ErrorCode::BadConfig, "bad list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

/// Applies `temperatures`, `lambdas`, `ks`, `mode`, `strategy`, `m`, `seed`,
/// `max_len`, `validation_fraction` and `workers` keys to a spec. Unknown
/// keys are rejected.
inline ExperimentSpec spec_from_config(const std::map<std::string, std::string>& kv, ExperimentSpec spec = {}) {
  auto one = [](const std::string& key, const std::string& v, auto tag) {
    auto items = parse_list<decltype(tag)>(v);
    if (items.size() != 1) throw Error(ErrorCode::BadConfig, "'" + key + "' takes one value");
    return items[0];
  };
  for (const auto& [k, v] : kv) {
    if (k == "temperatures" || k == "temps") spec.grid.temperatures = parse_list<double>(v);
    else if (k == "lambdas") spec.grid.lambdas = parse_list<double>(v);
    else if (k == "ks") spec.grid.ks = parse_list<std::size_t>(v);
    else if (k == "mode") spec.mode = parse_mode(v);
    else if (k == "strategy") spec.strategy = parse_strategy(v);
    else if (k == "m") spec.m = one(k, v, std::size_t{});
    else if (k == "seed") spec.seed = one(k, v, std::uint64_t{});
    else if (k == "max_len") spec.max_len = one(k, v, std::size_t{});
    else if (k == "validation_fraction") spec.validation_fraction = one(k, v, double{});
    else if (k == "workers") spec.workers = one(k, v, std::size_t{});
    else throw Error(ErrorCode::BadConfig, "unknown config key '" + k + "'");
  }
  if (spec.grid.temperatures.empty() || spec.grid.lambdas.empty() || spec.grid.ks.empty())
    throw Error(ErrorCode::BadConfig, "grid lists must be nonempty");
  if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
    throw Error(ErrorCode::BadConfig, "validation_fraction must be in (0, 1)");
  return spec;
}

}  // namespace knnicl
