#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "knnicl/detail/hash.hpp"
#include "knnicl/error.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

struct CorpusRecord {
  std::string domain;
  std::string utterance;
  ParseTree tree;
  std::size_t id = 0;  // row index in the source, after filtering
};

struct Corpus {
  std::vector<CorpusRecord> records;
  std::string source;
  std::string sha256;  // hex digest of the source bytes, when read from a file

  std::size_t size() const { return records.size(); }
};

/// Parses `domain<TAB>utterance<TAB>semantic_parse` rows. A leading header
/// row (`domain\tutterance\tsemantic_parse`) and blank lines are skipped.
/// Rows outside `domain_filter` are dropped before parsing.
inline Corpus parse_topv2(std::istream& is, std::string source = "<stream>",
                          const std::optional<std::string>& domain_filter = std::nullopt) {
  Corpus c;
  c.source = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("domain\t", 0) == 0) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw Error(ErrorCode::BadRow, "expected three tab-separated columns", lineno);
    std::string domain = line.substr(0, t1);
    if (domain.empty()) throw Error(ErrorCode::BadRow, "empty domain", lineno);
    if (domain_filter && domain != *domain_filter) continue;
    std::string utterance = line.substr(t1 + 1, t2 - t1 - 1);
    std::string parse = line.substr(t2 + 1);
    ParseTree tree;
    try {
      tree = parse_top(parse);
    } catch (const Error& e) {
      throw Error(ErrorCode::BadRow, std::string(e.what()), lineno);
    }
    c.records.push_back({std::move(domain), std::move(utterance), std::move(tree), c.records.size()});
  }
  return c;
}

inline Corpus load_topv2(const std::string& path, const std::optional<std::string>& domain_filter = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::istringstream ss(bytes);
  Corpus c = parse_topv2(ss, path, domain_filter);
  c.sha256 = detail::hex(detail::sha256(bytes));
  return c;
}

inline void write_topv2(const Corpus& c, std::ostream& os) {
  os << "domain\tutterance\tsemantic_parse\n";
  for (const auto& r : c.records) os << r.domain << '\t' << r.utterance << '\t' << to_bracket(r.tree) << '\n';
}

inline Corpus subset(const Corpus& c, const std::vector<std::size_t>& positions) {
  Corpus out;
  out.source = c.source;
  out.sha256 = c.sha256;
  for (auto i : positions) out.records.push_back(c.records.at(i));
  return out;
}

}  // namespace knnicl
