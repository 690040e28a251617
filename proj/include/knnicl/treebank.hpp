#pragma once

// TOP bracket trees, their reduction to code-style API calls, and the
// order-invariant exact-match metric.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "knnicl/detail/box.hpp"
#include "knnicl/detail/lex.hpp"
#include "knnicl/error.hpp"

namespace knnicl {

// ---------------------------------------------------------------------------
// Bracket trees

struct IntentNode;

struct TokenSpan {
  std::vector<std::string> tokens;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct LooseToken {
  std::string surface;
  friend bool operator==(const LooseToken&, const LooseToken&) = default;
};

/// A slot whose filler is either one nested intent or a nonempty token span.
/// When the bracket text puts loose words next to a nested intent, the words
/// are kept in `extra` (with `extra_before` of them preceding the intent) so
/// the tree still renders back to its source; the API reduction drops them.
struct SlotNode {
  std::string label;
  std::variant<detail::Box<IntentNode>, TokenSpan> filler;
  std::vector<std::string> extra;
  std::size_t extra_before = 0;

  bool has_nested_intent() const { return filler.index() == 0; }
  const IntentNode& nested() const { return *std::get<0>(filler); }
  const TokenSpan& span() const { return std::get<1>(filler); }

  friend bool operator==(const SlotNode&, const SlotNode&) = default;
};

using TreeChild = std::variant<SlotNode, LooseToken>;

struct IntentNode {
  std::string label;
  std::vector<TreeChild> children;
  friend bool operator==(const IntentNode&, const IntentNode&) = default;
};

struct ParseTree {
  IntentNode root;
  friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

// ---------------------------------------------------------------------------
// API calls

struct ApiCall;

struct QuotedSpan {
  std::vector<std::string> tokens;
  friend bool operator==(const QuotedSpan&, const QuotedSpan&) = default;
};

struct NestedCall {
  detail::Box<ApiCall> call;
  friend bool operator==(const NestedCall&, const NestedCall&) = default;
};

using ArgValue = std::variant<QuotedSpan, NestedCall>;

struct ApiArg {
  std::string name;
  ArgValue value;
  friend bool operator==(const ApiArg&, const ApiArg&) = default;
};

struct ApiCall {
  std::string name;
  std::vector<ApiArg> args;
  friend bool operator==(const ApiCall&, const ApiCall&) = default;
};

struct MatchResult {
  int score = 0;
  std::optional<int> pred_depth;
  int gold_depth = 1;
};

namespace detail {

inline bool is_label_body(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

struct BracketToken {
  enum Kind { Open, Close, Word } kind;
  std::string text;  // label without "[" for Open, surface for Word
};

inline std::vector<BracketToken> lex_brackets(std::string_view text) {
  std::vector<BracketToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (is_space(c)) {
      ++i;
    } else if (c == '[') {
      std::size_t j = i + 1;
      while (j < text.size() && !is_space(text[j]) && text[j] != '[' && text[j] != ']') ++j;
      out.push_back({BracketToken::Open, std::string(text.substr(i + 1, j - i - 1))});
      i = j;
    } else if (c == ']') {
      out.push_back({BracketToken::Close, {}});
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j]) && text[j] != '[' && text[j] != ']') ++j;
      out.push_back({BracketToken::Word, std::string(text.substr(i, j - i))});
      i = j;
    }
  }
  return out;
}

class BracketParser {
 public:
  explicit BracketParser(std::vector<BracketToken> toks) : toks_(std::move(toks)) {}

  ParseTree parse() {
    if (toks_.empty()) throw Error(ErrorCode::EmptyNode, "empty bracket expression");
    if (toks_[0].kind == BracketToken::Close)
      throw Error(ErrorCode::UnbalancedBrackets, "unexpected ']' at start");
    if (toks_[0].kind != BracketToken::Open)
      throw Error(ErrorCode::BadStructure, "expression must start with an intent bracket");
    auto [kind, label] = label_of(toks_[0].text);
    if (kind != "IN") throw Error(ErrorCode::BadStructure, "root must be an intent, got SL:" + label);
    pos_ = 1;
    ParseTree tree{parse_intent(std::move(label))};
    if (pos_ < toks_.size()) {
      if (toks_[pos_].kind == BracketToken::Close)
        throw Error(ErrorCode::UnbalancedBrackets, "extra ']' after root");
      throw Error(ErrorCode::BadStructure, "content after the root intent");
    }
    return tree;
  }

 private:
  static std::pair<std::string, std::string> label_of(const std::string& raw) {
    if (raw.size() < 4 || raw[2] != ':' || (raw.compare(0, 2, "IN") != 0 && raw.compare(0, 2, "SL") != 0))
      throw Error(ErrorCode::BadLabel, "bad label '" + raw + "'");
    std::string body = raw.substr(3);
    if (!is_label_body(body)) throw Error(ErrorCode::BadLabel, "bad label '" + raw + "'");
    return {raw.substr(0, 2), body};
  }

  IntentNode parse_intent(std::string label) {
    IntentNode node{std::move(label), {}};
    while (true) {
      if (pos_ >= toks_.size())
        throw Error(ErrorCode::UnbalancedBrackets, "missing ']' for IN:" + node.label);
      const BracketToken& t = toks_[pos_];
      if (t.kind == BracketToken::Close) {
        ++pos_;
        break;
      }
      if (t.kind == BracketToken::Word) {
        node.children.emplace_back(LooseToken{t.text});
        ++pos_;
        continue;
      }
      auto [kind, sub] = label_of(t.text);
      if (kind == "IN")
        throw Error(ErrorCode::BadStructure, "intent IN:" + sub + " directly under IN:" + node.label);
      ++pos_;
      node.children.emplace_back(parse_slot(std::move(sub)));
    }
    if (node.children.empty()) throw Error(ErrorCode::EmptyNode, "empty intent IN:" + node.label);
    return node;
  }

  SlotNode parse_slot(std::string label) {
    std::vector<std::string> words;
    std::optional<IntentNode> nested;
    std::size_t words_before = 0;
    while (true) {
      if (pos_ >= toks_.size())
        throw Error(ErrorCode::UnbalancedBrackets, "missing ']' for SL:" + label);
      const BracketToken& t = toks_[pos_];
      if (t.kind == BracketToken::Close) {
        ++pos_;
        break;
      }
      if (t.kind == BracketToken::Word) {
        words.push_back(t.text);
        ++pos_;
        continue;
      }
      auto [kind, sub] = label_of(t.text);
      if (kind == "SL")
        throw Error(ErrorCode::BadStructure, "slot SL:" + sub + " directly under SL:" + label);
      if (nested) throw Error(ErrorCode::BadStructure, "slot SL:" + label + " has two intents");
      ++pos_;
      words_before = words.size();
      nested = parse_intent(std::move(sub));
    }
    if (nested) {
      SlotNode s{std::move(label), detail::Box<IntentNode>(std::move(*nested)), std::move(words), words_before};
      return s;
    }
    if (words.empty()) throw Error(ErrorCode::EmptyNode, "empty slot SL:" + label);
    return SlotNode{std::move(label), TokenSpan{std::move(words)}, {}, 0};
  }

  std::vector<BracketToken> toks_;
  std::size_t pos_ = 0;
};

inline void render_intent(const IntentNode& n, std::vector<std::string>& out);

inline void render_slot(const SlotNode& s, std::vector<std::string>& out) {
  out.push_back("[SL:" + s.label);
  if (s.has_nested_intent()) {
    for (std::size_t i = 0; i < s.extra_before; ++i) out.push_back(s.extra[i]);
    render_intent(s.nested(), out);
    for (std::size_t i = s.extra_before; i < s.extra.size(); ++i) out.push_back(s.extra[i]);
  } else {
    for (const auto& w : s.span().tokens) out.push_back(w);
  }
  out.push_back("]");
}

inline void render_intent(const IntentNode& n, std::vector<std::string>& out) {
  out.push_back("[IN:" + n.label);
  for (const auto& c : n.children) {
    if (const auto* s = std::get_if<SlotNode>(&c))
      render_slot(*s, out);
    else
      out.push_back(std::get<LooseToken>(c).surface);
  }
  out.push_back("]");
}

inline ApiCall reduce_intent(const IntentNode& n) {
  ApiCall call{n.label, {}};
  for (const auto& c : n.children) {
    const auto* s = std::get_if<SlotNode>(&c);
    if (!s) continue;
    if (s->has_nested_intent())
      call.args.push_back({s->label, NestedCall{reduce_intent(s->nested())}});
    else
      call.args.push_back({s->label, QuotedSpan{s->span().tokens}});
  }
  return call;
}

inline void serialize_into(const ApiCall& api, std::vector<std::string>& out) {
  out.push_back(api.name);
  out.push_back("(");
  for (std::size_t i = 0; i < api.args.size(); ++i) {
    if (i) out.push_back(",");
    out.push_back(api.args[i].name);
    out.push_back("=");
    if (const auto* q = std::get_if<QuotedSpan>(&api.args[i].value)) {
      out.push_back("\"");
      for (const auto& t : q->tokens) out.push_back(t);
      out.push_back("\"");
    } else {
      serialize_into(*std::get<NestedCall>(api.args[i].value).call, out);
    }
  }
  out.push_back(")");
}

class ApiParser {
 public:
  explicit ApiParser(std::vector<std::string> toks) : toks_(std::move(toks)) {}

  ApiCall parse() {
    ApiCall call = parse_call();
    if (pos_ != toks_.size()) fail("trailing tokens after call");
    return call;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::MalformedApi, msg + " at token " + std::to_string(pos_));
  }
  const std::string& peek() const {
    static const std::string kEnd;
    return pos_ < toks_.size() ? toks_[pos_] : kEnd;
  }
  void expect(std::string_view t) {
    if (pos_ >= toks_.size() || toks_[pos_] != t) fail("expected '" + std::string(t) + "'");
    ++pos_;
  }
  std::string name() {
    if (pos_ >= toks_.size() || !is_label_body(toks_[pos_])) fail("expected a name");
    return toks_[pos_++];
  }

  ApiCall parse_call() {
    ApiCall call{name(), {}};
    expect("(");
    if (peek() == ")") {
      ++pos_;
      return call;
    }
    while (true) {
      ApiArg arg;
      arg.name = name();
      expect("=");
      if (peek() == "\"") {
        ++pos_;
        QuotedSpan span;
        while (pos_ < toks_.size() && toks_[pos_] != "\"") span.tokens.push_back(toks_[pos_++]);
        if (pos_ >= toks_.size()) fail("unterminated quote");
        if (span.tokens.empty()) fail("empty quoted span");
        ++pos_;
        arg.value = std::move(span);
      } else {
        arg.value = NestedCall{parse_call()};
      }
      call.args.push_back(std::move(arg));
      if (peek() == ",") {
        ++pos_;
        continue;
      }
      expect(")");
      return call;
    }
  }

  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

inline ParseTree parse_top(std::string_view text) {
  return detail::BracketParser(detail::lex_brackets(text)).parse();
}

/// Renders a tree in TOP bracket notation; inverse of `parse_top`.
inline std::string to_bracket(const ParseTree& tree) {
  std::vector<std::string> out;
  detail::render_intent(tree.root, out);
  return detail::join(out);
}

/// Words of the utterance underlying the tree, in order.
inline std::vector<std::string> utterance_tokens(const ParseTree& tree) {
  std::vector<std::string> out;
  auto walk = [&](auto&& self, const IntentNode& n) -> void {
    for (const auto& c : n.children) {
      if (const auto* s = std::get_if<SlotNode>(&c)) {
        if (s->has_nested_intent()) {
          for (std::size_t i = 0; i < s->extra_before; ++i) out.push_back(s->extra[i]);
          self(self, s->nested());
          for (std::size_t i = s->extra_before; i < s->extra.size(); ++i) out.push_back(s->extra[i]);
        } else {
          for (const auto& w : s->span().tokens) out.push_back(w);
        }
      } else {
        out.push_back(std::get<LooseToken>(c).surface);
      }
    }
  };
  walk(walk, tree.root);
  return out;
}

/// Every intent and slot label in the tree, prefixed `IN:` / `SL:`.
inline std::set<std::string> tree_labels(const ParseTree& tree) {
  std::set<std::string> out;
  auto walk = [&](auto&& self, const IntentNode& n) -> void {
    out.insert("IN:" + n.label);
    for (const auto& c : n.children) {
      if (const auto* s = std::get_if<SlotNode>(&c)) {
        out.insert("SL:" + s->label);
        if (s->has_nested_intent()) self(self, s->nested());
      }
    }
  };
  walk(walk, tree.root);
  return out;
}

inline ApiCall tree_to_api(const ParseTree& tree) { return detail::reduce_intent(tree.root); }

inline std::vector<std::string> serialize_api_tokens(const ApiCall& api) {
  std::vector<std::string> out;
  detail::serialize_into(api, out);
  return out;
}

inline std::string serialize_api(const ApiCall& api) { return detail::join(serialize_api_tokens(api)); }

inline ApiCall parse_api(std::string_view text) {
  return detail::ApiParser(detail::split_structural(text)).parse();
}

inline std::string serialize_value(const ArgValue& v) {
  if (const auto* q = std::get_if<QuotedSpan>(&v)) return "\" " + detail::join(q->tokens) + " \"";
  return serialize_api(*std::get<NestedCall>(v).call);
}

/// Sorts sibling arguments at every level by (slot name, serialized value).
/// Stable, so identical pairs keep their relative order.
inline ApiCall canonicalize(const ApiCall& api) {
  ApiCall out{api.name, {}};
  std::vector<std::pair<std::string, ApiArg>> keyed;
  keyed.reserve(api.args.size());
  for (const auto& a : api.args) {
    ApiArg c{a.name, a.value};
    if (auto* n = std::get_if<NestedCall>(&c.value)) *n->call = canonicalize(*n->call);
    std::string key = serialize_value(c.value);
    keyed.emplace_back(std::move(key), std::move(c));
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
    if (x.second.name != y.second.name) return x.second.name < y.second.name;
    return x.first < y.first;
  });
  for (auto& [k, a] : keyed) out.args.push_back(std::move(a));
  return out;
}

inline int depth(const ApiCall& api) {
  int d = 0;
  for (const auto& a : api.args)
    if (const auto* n = std::get_if<NestedCall>(&a.value)) d = std::max(d, depth(*n->call));
  return 1 + d;
}

/// Scores a raw prediction against the gold call. Unparseable predictions
/// score 0 with no depth. Gold spans are re-lexed through the API grammar so
/// that both sides share one tokenization.
inline MatchResult exact_match(std::string_view pred, const ApiCall& gold) {
  MatchResult r;
  r.gold_depth = depth(gold);
  ApiCall lhs;
  try {
    lhs = parse_api(pred);
  } catch (const Error&) {
    return r;
  }
  r.pred_depth = depth(lhs);
  ApiCall rhs = gold;
  try {
    rhs = parse_api(serialize_api(gold));
  } catch (const Error&) {
  }
  r.score = canonicalize(lhs) == canonicalize(rhs) ? 1 : 0;
  return r;
}

}  // namespace knnicl
