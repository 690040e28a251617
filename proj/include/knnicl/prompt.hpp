#pragma once

#include <optional>
#include <string>
#include <vector>

#include "knnicl/error.hpp"
#include "knnicl/textcore.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

struct Exemplar {
  std::string utterance;
  std::string api;  // serialized ApiCall
};

/// `[documentation] + [exemplars] + [target utterance]`, as text and as
/// token ids in one session vocabulary.
struct Prompt {
  std::optional<std::string> documentation;
  std::vector<Exemplar> exemplars;
  std::string target;

  std::vector<TokenId> doc_ids;
  std::vector<std::vector<TokenId>> exemplar_ids;  // each `utterance <sep> api </s>`
  std::vector<TokenId> target_ids;                 // utterance only
  std::size_t vocab_extent = 0;                    // ids in the prompt are < this

  /// The full conditioning stream: doc, exemplar blocks, `target <sep>`.
  std::vector<TokenId> rendered() const {
    std::vector<TokenId> out = doc_ids;
    for (const auto& e : exemplar_ids) out.insert(out.end(), e.begin(), e.end());
    out.insert(out.end(), target_ids.begin(), target_ids.end());
    out.push_back(tok::kSep);
    return out;
  }
};

inline Prompt build_prompt(SessionVocab& vocab, std::optional<std::string> doc, std::vector<Exemplar> exemplars,
                           std::string target) {
  Prompt p;
  if (doc && !doc->empty()) p.doc_ids = tokenize(*doc, vocab);
  for (const auto& e : exemplars) {
    auto utt = tokenize(e.utterance, vocab);
    if (utt.empty()) throw Error(ErrorCode::MalformedExemplar, "exemplar with empty utterance");
    try {
      parse_api(e.api);
    } catch (const Error& err) {
      throw Error(ErrorCode::MalformedExemplar, "exemplar API does not parse: " + e.api);
    }
    auto api = tokenize(e.api, vocab);
    std::vector<TokenId> block = std::move(utt);
    block.push_back(tok::kSep);
    block.insert(block.end(), api.begin(), api.end());
    block.push_back(tok::kEos);
    p.exemplar_ids.push_back(std::move(block));
  }
  p.target_ids = tokenize(target, vocab);
  if (p.target_ids.empty()) throw Error(ErrorCode::EmptyInput, "empty target utterance");
  p.documentation = (doc && !doc->empty()) ? doc : std::nullopt;
  p.exemplars = std::move(exemplars);
  p.target = std::move(target);
  p.vocab_extent = vocab.size();
  return p;
}

}  // namespace knnicl
