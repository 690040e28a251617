// Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "knnicl/knnicl.hpp"

using namespace knnicl;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

Corpus read_corpus(const std::string& path, const std::optional<std::string>& domain = std::nullopt) {
  return load_topv2(path, domain);
}

void write_corpus(const Corpus& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_topv2(c, os);
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  os << text;
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
}

RecordFilter parse_filter(const std::string& s) {
  if (s == "labels") return RecordFilter::LabelsOnly;
  if (s == "all") return RecordFilter::AllTokens;
  throw Error(ErrorCode::BadConfig, "unknown filter '" + s + "'");
}

/// Options shared by the commands that build a pipeline from a demo pool.
struct PoolOptions {
  std::string pool;
  std::string filter = "labels";
  double alpha = 0.5;
  double beta = 0.5;
  std::string doc;
  bool doc_stub = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--pool", pool, "demo pool TSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--filter", filter, "datastore record filter")->check(CLI::IsMember({"labels", "all"}));
    cmd->add_option("--alpha", alpha, "prompt mixing weight of the reference LM")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--beta", beta, "copy weight of the reference LM")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--doc", doc, "API documentation file placed before the exemplars")->check(CLI::ExistingFile);
    cmd->add_flag("--doc-stub", doc_stub, "generate documentation from the pool's label names");
  }

  PipelineOptions options(const Corpus& pool_corpus) const {
    PipelineOptions o;
    o.filter = parse_filter(filter);
    o.lm.prompt_mix = alpha;
    o.lm.copy_boost = beta;
    if (!doc.empty()) {
      std::ifstream is(doc, std::ios::binary);
      if (!is) throw Error(ErrorCode::IoError, "cannot read " + doc);
      o.documentation = std::string(std::istreambuf_iterator<char>(is), {});
    } else if (doc_stub) {
      o.documentation = documentation_stub(pool_corpus);
    }
    return o;
  }
};

struct Target {
  std::string id;
  std::string utterance;
};

std::vector<Target> read_targets(const std::string& utterance, const std::string& input) {
  std::vector<Target> out;
  if (!utterance.empty()) out.push_back({"0", utterance});
  if (!input.empty()) {
    Corpus c = read_corpus(input);
    for (const auto& r : c.records) out.push_back({std::to_string(r.id), r.utterance});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kNN-augmented in-context semantic parsing"};
  app.require_subcommand(1);

  // ingest
  std::string in_path, out_path, domain;
  auto* ingest = app.add_subcommand("ingest", "validate a TOPv2-style TSV and write a normalized corpus");
  ingest->add_option("--in", in_path, "input TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out_path, "normalized corpus TSV")->required();
  ingest->add_option("--domain", domain, "keep only this domain");

  // synth
  std::uint64_t synth_seed = 1;
  std::size_t n_train = 200, n_test = 100;
  std::string train_out, test_out;
  auto* synth = app.add_subcommand("synth", "sample a synthetic corpus from the built-in grammar");
  synth->add_option("--seed", synth_seed, "grammar seed");
  synth->add_option("--train", n_train, "training examples")->check(CLI::PositiveNumber);
  synth->add_option("--test", n_test, "test examples")->check(CLI::PositiveNumber);
  synth->add_option("--train-out", train_out, "training corpus TSV")->required();
  synth->add_option("--test-out", test_out, "test corpus TSV")->required();

  // split
  std::string split_corpus, split_out, split_rest, split_manifest;
  std::size_t spis = 0, pool_size = 0;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "draw a demo pool: SPIS few-shot or uniform random");
  split->add_option("--corpus", split_corpus, "corpus TSV")->required()->check(CLI::ExistingFile);
  auto* o_spis = split->add_option("--spis", spis, "per-label quota")->check(CLI::PositiveNumber);
  auto* o_pool = split->add_option("--pool", pool_size, "pool size")->check(CLI::PositiveNumber);
  o_spis->excludes(o_pool);
  split->add_option("--seed", split_seed, "shuffle seed");
  split->add_option("--out", split_out, "pool TSV")->required();
  split->add_option("--rest", split_rest, "remainder TSV");
  split->add_option("--manifest", split_manifest, "JSON manifest of record ids");

  // build-datastore
  PoolOptions bd_pool;
  std::string bd_out, bd_vocab;
  auto* build = app.add_subcommand("build-datastore", "build and save the datastore of a demo pool");
  bd_pool.attach(build);
  build->add_option("--out", bd_out, "datastore file")->required();
  build->add_option("--vocab-out", bd_vocab, "vocabulary file");

  // select-demos
  PoolOptions sd_pool;
  std::string sd_strategy = "sim", sd_utterance;
  std::size_t sd_m = 10;
  std::uint64_t sd_seed = 0;
  auto* select = app.add_subcommand("select-demos", "print the exemplars chosen for an utterance");
  sd_pool.attach(select);
  select->add_option("--utterance", sd_utterance, "target utterance")->required();
  select->add_option("--strategy", sd_strategy, "selection strategy")->check(CLI::IsMember({"random", "sim", "para"}));
  select->add_option("--m", sd_m, "exemplar count")->check(CLI::PositiveNumber);
  select->add_option("--seed", sd_seed, "seed for random selection");

  // decode
  PoolOptions dc_pool;
  std::string dc_mode = "knn-icl", dc_strategy = "sim", dc_utterance, dc_input, dc_out, dc_trace, dc_store;
  double dc_lambda = 0.3, dc_temp = 100;
  std::size_t dc_k = 20, dc_max_len = 128, dc_m = 10;
  std::uint64_t dc_seed = 0;
  auto* decode = app.add_subcommand("decode", "greedy-decode utterances to API calls");
  dc_pool.attach(decode);
  decode->add_option("--mode", dc_mode, "decoding mode")->check(CLI::IsMember({"icl", "knn-lm", "knn-icl"}));
  decode->add_option("--lambda", dc_lambda, "interpolation weight")->check(CLI::Range(0.0, 1.0));
  decode->add_option("--temp", dc_temp, "kNN temperature")->check(CLI::PositiveNumber);
  decode->add_option("--k", dc_k, "neighbor count")->check(CLI::PositiveNumber);
  decode->add_option("--max-len", dc_max_len, "maximum output tokens")->check(CLI::Range(4, 100000));
  decode->add_option("--strategy", dc_strategy, "selection strategy")->check(CLI::IsMember({"random", "sim", "para"}));
  decode->add_option("--m", dc_m, "exemplar count")->check(CLI::PositiveNumber);
  decode->add_option("--seed", dc_seed, "seed for random selection");
  decode->add_option("--store", dc_store, "saved datastore to query instead of rebuilding")->check(CLI::ExistingFile);
  auto* o_utt = decode->add_option("--utterance", dc_utterance, "single target utterance");
  auto* o_in = decode->add_option("--in", dc_input, "TSV of targets")->check(CLI::ExistingFile);
  o_utt->excludes(o_in);
  decode->add_option("--out", dc_out, "predictions TSV (default stdout)");
  decode->add_option("--trace", dc_trace, "JSON-lines decode trace");

  // evaluate
  std::string ev_gold, ev_pred, ev_out;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against gold and emit a report");
  evaluate->add_option("--gold", ev_gold, "gold corpus TSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--pred", ev_pred, "predictions TSV from decode")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", ev_out, "report JSON (default stdout)");

  // sweep
  PoolOptions sw_pool;
  std::string sw_eval, sw_config, sw_out;
  auto* sweep = app.add_subcommand("sweep", "grid-search on a validation slice and report test metrics");
  sw_pool.attach(sweep);
  sweep->add_option("--eval", sw_eval, "evaluation corpus TSV")->required()->check(CLI::ExistingFile);
  sweep->add_option("--config", sw_config, "grid file of key = value lines")->check(CLI::ExistingFile);
  sweep->add_option("--out", sw_out, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*ingest) {
      Corpus c = read_corpus(in_path, domain.empty() ? std::nullopt : std::optional<std::string>(domain));
      write_corpus(c, out_path);
      std::cout << c.size() << " records\tsha256 " << c.sha256 << '\n';
    } else if (*synth) {
      auto [train, test] = gen_synthetic(synth_seed, n_train, n_test);
      write_corpus(train, train_out);
      write_corpus(test, test_out);
      std::cout << train.size() << " train\t" << test.size() << " test\n";
    } else if (*split) {
      if (!*o_spis && !*o_pool) {
        std::cerr << "split: one of --spis or --pool is required\n";
        return kUsage;
      }
      Corpus c = read_corpus(split_corpus);
      std::vector<std::size_t> pool, rest;
      if (*o_spis) {
        auto s = make_spis_split(c, spis, split_seed);
        pool = s.pool;
        rest = s.remainder;
      } else {
        pool = sample_pool(c, pool_size, split_seed);
        std::vector<bool> in(c.size(), false);
        for (auto i : pool) in[i] = true;
        for (std::size_t i = 0; i < c.size(); ++i)
          if (!in[i]) rest.push_back(i);
      }
      write_corpus(subset(c, pool), split_out);
      if (!split_rest.empty()) write_corpus(subset(c, rest), split_rest);
      if (!split_manifest.empty()) {
        nlohmann::json j = {{"source", c.source},
                            {"sha256", c.sha256},
                            {"kind", *o_spis ? "spis" : "pool"},
                            {"n", *o_spis ? spis : pool_size},
                            {"seed", split_seed},
                            {"pool", manifest(c, pool)},
                            {"remainder", manifest(c, rest)}};
        write_text(split_manifest, j.dump(2) + "\n");
      }
      std::cout << pool.size() << " pool\t" << rest.size() << " remainder\n";
    } else if (*build) {
      Corpus pool = read_corpus(bd_pool.pool);
      Pipeline pipe(pool, bd_pool.options(pool));
      pipe.store().save(bd_out);
      if (!bd_vocab.empty()) pipe.vocab().save(bd_vocab);
      std::cout << pipe.store().size() << " records\td " << pipe.store().dim() << '\n';
    } else if (*select) {
      Corpus pool = read_corpus(sd_pool.pool);
      Pipeline pipe(pool, sd_pool.options(pool));
      auto picked = pipe.select(sd_utterance, parse_strategy(sd_strategy), sd_m, sd_seed);
      for (const auto& e : pipe.exemplars(picked)) std::cout << e.utterance << '\t' << e.api << '\n';
    } else if (*decode) {
      auto targets = read_targets(dc_utterance, dc_input);
      if (targets.empty()) {
        std::cerr << "decode: one of --utterance or --in is required\n";
        return kUsage;
      }
      Corpus pool = read_corpus(dc_pool.pool);
      Pipeline pipe(pool, dc_pool.options(pool));
      Mode mode = parse_mode(dc_mode);
      DecoderConfig cfg = detail::decoder_config({mode == Mode::Icl ? 0.0 : dc_lambda, dc_temp, dc_k}, dc_max_len);
      std::optional<Datastore> loaded;
      std::optional<KnnRetriever> retriever;
      if (!dc_store.empty()) {
        loaded.emplace(Datastore::load(dc_store));
        retriever.emplace(*loaded, pipe.encoder(), pipe.vocab());
      }
      std::ostringstream preds, trace;
      for (const auto& t : targets) {
        std::vector<Exemplar> ex;
        if (mode != Mode::KnnLm) ex = pipe.exemplars(pipe.select(t.utterance, parse_strategy(dc_strategy), dc_m, dc_seed));
        DecodeResult r = retriever ? pipe.decode(t.utterance, ex, cfg, *retriever) : pipe.decode(t.utterance, ex, cfg);
        preds << t.id << '\t' << t.utterance << '\t' << r.api << '\n';
        r.trace.write_jsonl(trace);
      }
      if (dc_out.empty())
        std::cout << preds.str();
      else
        write_text(dc_out, preds.str());
      if (!dc_trace.empty()) write_text(dc_trace, trace.str());
    } else if (*evaluate) {
      Corpus gold = read_corpus(ev_gold);
      std::map<std::size_t, std::string> preds;
      std::ifstream is(ev_pred, std::ios::binary);
      if (!is) throw Error(ErrorCode::IoError, "cannot read " + ev_pred);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw Error(ErrorCode::BadRow, "expected id, utterance, prediction", lineno);
        std::size_t id;
        try {
          id = std::stoul(line.substr(0, t1));
        } catch (const std::exception&) {
          throw Error(ErrorCode::BadRow, "bad id", lineno);
        }
        preds[id] = line.substr(t2 + 1);
      }
      ExperimentReport report;
      report.mode = "evaluate";
      report.strategy = "none";
      for (const auto& r : gold.records) {
        auto it = preds.find(r.id);
        if (it == preds.end()) throw Error(ErrorCode::BadRow, "no prediction for record " + std::to_string(r.id));
        report.examples.push_back(score_example(r, it->second));
        report.test_ids.push_back(r.id);
      }
      report.test_em = exact_match_rate(report.examples);
      report.per_domain = domain_breakdown(report.examples);
      report.per_depth = depth_breakdown(report.examples);
      nlohmann::json j = report;
      if (ev_out.empty())
        std::cout << j.dump(2) << '\n';
      else
        write_text(ev_out, j.dump(2) + "\n");
      std::cerr << "exact match " << report.test_em << " over " << report.examples.size() << '\n';
    } else if (*sweep) {
      std::map<std::string, std::string> kv;
      if (!sw_config.empty()) {
        std::ifstream is(sw_config);
        if (!is) throw Error(ErrorCode::IoError, "cannot read " + sw_config);
        kv = parse_config(is);
      }
      // pipeline keys may also come from the grid file
      if (auto f = kv.find("filter"); f != kv.end()) sw_pool.filter = f->second, kv.erase(f);
      if (auto f = kv.find("alpha"); f != kv.end()) sw_pool.alpha = parse_list<double>(f->second).at(0), kv.erase(f);
      if (auto f = kv.find("beta"); f != kv.end()) sw_pool.beta = parse_list<double>(f->second).at(0), kv.erase(f);
      ExperimentSpec spec = spec_from_config(kv);
      Corpus pool = read_corpus(sw_pool.pool);
      Corpus eval = read_corpus(sw_eval);
      Pipeline pipe(pool, sw_pool.options(pool));
      ExperimentReport report = run_experiment(pipe, eval, spec);
      nlohmann::json best = report.best;
      std::cout << "best " << best.dump() << "\tvalidation_em " << report.validation_em << "\ttest_em "
                << report.test_em << '\n';
      if (!sw_out.empty()) write_text(sw_out, nlohmann::json(report).dump(2) + "\n");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (e.line()) std::cerr << " (line " << e.line() << ")";
    std::cerr << '\n';
    return e.code() == ErrorCode::BadConfig ? kUsage : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
