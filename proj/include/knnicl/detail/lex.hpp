#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace knnicl::detail {

inline bool is_structural(char c) {
  return c == '(' || c == ')' || c == '=' || c == ',' || c == '"';
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Whitespace split where each of `( ) = , "` always forms its own token.
inline std::vector<std::string> split_structural(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_structural(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

}  // namespace knnicl::detail
