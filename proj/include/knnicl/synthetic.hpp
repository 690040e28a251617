#pragma once

// Probabilistic template grammar producing TOP-style trees: 6 intents,
// 10 slots, nesting depth up to 3.

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "knnicl/corpus.hpp"
#include "knnicl/detail/hash.hpp"
#include "knnicl/detail/lex.hpp"
#include "knnicl/treebank.hpp"

namespace knnicl {

namespace detail {

class TemplateGrammar {
 public:
  explicit TemplateGrammar(std::uint64_t seed) : rng_(seed) {}

  /// Returns (domain, tree).
  std::pair<std::string, ParseTree> sample() {
    switch (pick(6)) {
      case 0: return {"navigation", ParseTree{directions(3)}};
      case 1: return {"navigation", ParseTree{duration(3)}};
      case 2: return {"navigation", ParseTree{location_root(3)}};
      case 3: return {"event", ParseTree{event_root(3)}};
      case 4: return {"weather", ParseTree{weather(3)}};
      default: return {"alarm", ParseTree{alarm()}};
    }
  }

 private:
  using Words = std::vector<std::string_view>;

  inline static const Words kPlaces = {"airport", "downtown", "central park", "union station", "main street",
                                       "city hall", "pier 39", "oak avenue", "lincoln center", "chinatown",
                                       "harbor point", "midtown", "fenway", "broadway", "uptown"};
  inline static const Words kCities = {"boston", "chicago", "seattle", "denver", "miami",
                                       "austin", "portland", "atlanta", "dallas", "phoenix"};
  inline static const Words kEventNames = {"eagles", "lakers", "red sox", "taylor swift", "coldplay",
                                           "yankees", "warriors", "symphony", "jazz fest", "comic con"};
  inline static const Words kCategories = {"concert", "game", "festival", "parade", "show", "match"};
  inline static const Words kDates = {"tomorrow", "tonight", "friday", "noon", "7 am",
                                      "6 pm", "next week", "monday morning", "sunday night", "this weekend"};
  inline static const Words kMethods = {"driving", "walking", "biking", "transit", "carpool"};
  inline static const Words kWeather = {"rainy", "snowy", "sunny", "windy", "cold", "hot", "foggy"};
  inline static const Words kAlarmNames = {"work", "gym", "school", "meeting", "flight"};
  inline static const Words kPoints = {"gas station", "coffee shop", "pharmacy", "parking garage",
                                       "grocery store", "bank", "hotel", "restaurant"};

  std::size_t pick(std::size_t n) { return uniform_index(rng_, n); }
  bool coin(double p) { return uniform_real(rng_) < p; }
  std::string_view from(const Words& w) { return w[pick(w.size())]; }

  static void words(IntentNode& n, std::string_view text) {
    for (auto& w : split_whitespace(text)) n.children.emplace_back(LooseToken{std::move(w)});
  }
  static void span(IntentNode& n, std::string label, std::string_view text) {
    n.children.emplace_back(SlotNode{std::move(label), TokenSpan{split_whitespace(text)}, {}, 0});
  }
  static void nested(IntentNode& n, std::string label, IntentNode inner) {
    n.children.emplace_back(SlotNode{std::move(label), Box<IntentNode>(std::move(inner)), {}, 0});
  }

  // A place slot: plain span, or (budget permitting) a nested event or
  // location intent.
  void place_slot(IntentNode& n, std::string label, int budget) {
    double r = uniform_real(rng_);
    if (budget >= 2 && r < 0.35)
      nested(n, std::move(label), event_nested(budget - 1));
    else if (budget >= 2 && r < 0.55)
      nested(n, std::move(label), location_nested(budget - 1));
    else
      span(n, std::move(label), from(kPlaces));
  }

  IntentNode event_nested(int budget) {
    IntentNode n{"GET_EVENT", {}};
    switch (pick(3)) {
      case 0:
        words(n, "the");
        span(n, "NAME_EVENT", from(kEventNames));
        words(n, "game");
        break;
      case 1:
        words(n, "the");
        span(n, "CATEGORY_EVENT", from(kCategories));
        span(n, "DATE_TIME", from(kDates));
        break;
      default:
        words(n, "the");
        span(n, "NAME_EVENT", from(kEventNames));
        span(n, "CATEGORY_EVENT", from(kCategories));
        words(n, "at");
        if (budget >= 2)
          nested(n, "LOCATION", location_nested(budget - 1));
        else
          span(n, "LOCATION", from(kPlaces));
        break;
    }
    return n;
  }

  IntentNode location_nested(int /*budget*/) {
    IntentNode n{"GET_LOCATION", {}};
    if (coin(0.5)) {
      words(n, "the nearest");
      span(n, "POINT_ON_MAP", from(kPoints));
    } else {
      words(n, "the");
      span(n, "POINT_ON_MAP", from(kPoints));
      words(n, "in");
      span(n, "LOCATION", from(kCities));
    }
    return n;
  }

  IntentNode directions(int budget) {
    IntentNode n{"GET_DIRECTIONS", {}};
    switch (pick(4)) {
      case 0:
        words(n, "directions to");
        place_slot(n, "DESTINATION", budget);
        break;
      case 1:
        words(n, "how do i get to");
        place_slot(n, "DESTINATION", budget);
        break;
      case 2:
        span(n, "METHOD_TRAVEL", from(kMethods));
        words(n, "directions to");
        place_slot(n, "DESTINATION", budget);
        words(n, "from");
        span(n, "SOURCE", from(kPlaces));
        break;
      default:
        words(n, "show me the way to");
        place_slot(n, "DESTINATION", budget);
        span(n, "DATE_TIME", from(kDates));
        break;
    }
    return n;
  }

  IntentNode duration(int budget) {
    IntentNode n{"GET_ESTIMATED_DURATION", {}};
    switch (pick(4)) {
      case 3:
        words(n, "how far is");
        span(n, "DESTINATION", from(kPlaces));
        break;
      case 0:
        words(n, "how long will it take to get to");
        place_slot(n, "DESTINATION", budget);
        break;
      case 1:
        words(n, "how long is the trip to");
        place_slot(n, "DESTINATION", budget);
        words(n, "from");
        span(n, "SOURCE", from(kPlaces));
        break;
      default:
        words(n, "how long to get to");
        place_slot(n, "DESTINATION", budget);
        span(n, "METHOD_TRAVEL", from(kMethods));
        break;
    }
    return n;
  }

  IntentNode location_root(int /*budget*/) {
    IntentNode n{"GET_LOCATION", {}};
    if (coin(0.5)) {
      words(n, "where is the nearest");
      span(n, "POINT_ON_MAP", from(kPoints));
    } else {
      words(n, "find a");
      span(n, "POINT_ON_MAP", from(kPoints));
      words(n, "in");
      span(n, "LOCATION", from(kCities));
    }
    return n;
  }

  IntentNode event_root(int budget) {
    IntentNode n{"GET_EVENT", {}};
    switch (pick(4)) {
      case 3:
        words(n, "any");
        span(n, "CATEGORY_EVENT", from(kCategories));
        words(n, "events");
        break;
      case 0:
        words(n, "when is the");
        span(n, "NAME_EVENT", from(kEventNames));
        words(n, "game");
        break;
      case 1:
        words(n, "any");
        span(n, "CATEGORY_EVENT", from(kCategories));
        words(n, "events in");
        span(n, "LOCATION", from(kCities));
        span(n, "DATE_TIME", from(kDates));
        break;
      default:
        words(n, "what is happening near");
        if (budget >= 2)
          nested(n, "LOCATION", location_nested(budget - 1));
        else
          span(n, "LOCATION", from(kPlaces));
        span(n, "DATE_TIME", from(kDates));
        break;
    }
    return n;
  }

  IntentNode weather(int budget) {
    IntentNode n{"GET_WEATHER", {}};
    switch (pick(5)) {
      case 3:
        words(n, "what is the weather in");
        span(n, "LOCATION", from(kCities));
        break;
      case 4:
        words(n, "will it be");
        span(n, "WEATHER_ATTRIBUTE", from(kWeather));
        break;
      case 0:
        words(n, "what is the weather in");
        span(n, "LOCATION", from(kCities));
        span(n, "DATE_TIME", from(kDates));
        break;
      case 1:
        words(n, "will it be");
        span(n, "WEATHER_ATTRIBUTE", from(kWeather));
        span(n, "DATE_TIME", from(kDates));
        break;
      default:
        words(n, "will it be");
        span(n, "WEATHER_ATTRIBUTE", from(kWeather));
        words(n, "at");
        if (budget >= 2)
          nested(n, "LOCATION", event_nested(budget - 1));
        else
          span(n, "LOCATION", from(kPlaces));
        break;
    }
    return n;
  }

  IntentNode alarm() {
    IntentNode n{"CREATE_ALARM", {}};
    switch (pick(3)) {
      case 0:
        words(n, "set an alarm for");
        span(n, "DATE_TIME", from(kDates));
        break;
      case 1:
        words(n, "wake me up at");
        span(n, "DATE_TIME", from(kDates));
        break;
      default:
        words(n, "set an alarm for");
        span(n, "ALARM_NAME", from(kAlarmNames));
        span(n, "DATE_TIME", from(kDates));
        break;
    }
    return n;
  }

  std::mt19937_64 rng_;
};

}  // namespace detail

/// Samples `n_train + n_test` trees with distinct utterances; the two
/// corpora never share an utterance string.
inline std::pair<Corpus, Corpus> gen_synthetic(std::uint64_t seed, std::size_t n_train, std::size_t n_test) {
  detail::TemplateGrammar grammar(seed);
  std::set<std::string> seen;
  Corpus train, test;
  train.source = test.source = "synthetic:" + std::to_string(seed);
  std::size_t attempts = 0;
  const std::size_t limit = 200 * (n_train + n_test) + 1000;
  while (train.records.size() + test.records.size() < n_train + n_test && attempts++ < limit) {
    auto [domain, tree] = grammar.sample();
    std::string utt = detail::join(utterance_tokens(tree));
    if (!seen.insert(utt).second) continue;
    Corpus& dst = train.records.size() < n_train ? train : test;
    dst.records.push_back({domain, std::move(utt), std::move(tree), dst.records.size()});
  }
  return {std::move(train), std::move(test)};
}

}  // namespace knnicl
