#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "knnicl/treebank.hpp"

namespace knnicl::testing {

inline std::string random_label(std::mt19937_64& rng) {
  static const std::vector<std::string> names = {"A", "B", "GET_EVENT", "NAME_EVENT", "X1", "DATE_TIME",
                                                 "LOCATION", "SL_2", "Q", "DESTINATION", "Z_Z", "METHOD"};
  return names[rng() % names.size()];
}

inline std::string random_word(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"the", "Eagles", "game", "7", "pm", "my", "home",
                                                 "o'clock", "New", "york", "-", "x", "a.m.", "café"};
  return words[rng() % words.size()];
}

inline ApiCall random_call(std::mt19937_64& rng, int max_depth = 4, std::size_t max_args = 4) {
  ApiCall c{random_label(rng), {}};
  std::size_t n = rng() % (max_args + 1);
  for (std::size_t i = 0; i < n; ++i) {
    ApiArg a;
    a.name = random_label(rng);
    if (max_depth > 1 && rng() % 3 == 0) {
      a.value = NestedCall{detail::Box<ApiCall>(random_call(rng, max_depth - 1, max_args))};
    } else {
      QuotedSpan q;
      std::size_t len = 1 + rng() % 3;
      for (std::size_t j = 0; j < len; ++j) q.tokens.push_back(random_word(rng));
      a.value = q;
    }
    c.args.push_back(std::move(a));
  }
  return c;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("knnicl-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace knnicl::testing
