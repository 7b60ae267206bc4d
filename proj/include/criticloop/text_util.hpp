#pragma once

#include <optional>
#include <string>
#include <string_view>

// Small hand-rolled scanning helpers shared by the transcript parsers.
// std::regex is deliberately not used in these paths: the Monte-Carlo suites
// push millions of short completions through the parsers and regex overhead
// dominates everything else.

namespace criticloop {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view word) {
  if (pos + word.size() > s.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (lower(s[pos + i]) != lower(word[i])) return false;
  return true;
}

// Case-insensitive substring search; npos when absent.
inline std::size_t find_ci(std::string_view s, std::string_view word, std::size_t from = 0) {
  if (word.empty()) return from <= s.size() ? from : std::string_view::npos;
  if (s.size() < word.size()) return std::string_view::npos;
  for (std::size_t i = from; i + word.size() <= s.size(); ++i)
    if (starts_with_ci(s, i, word)) return i;
  return std::string_view::npos;
}

inline std::size_t skip_spaces(std::string_view s, std::size_t pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  return pos;
}

// Parses a decimal integer at `pos`, advancing it. Empty optional when no
// digit is present. Saturates far above any plausible step count.
inline std::optional<std::size_t> scan_number(std::string_view s, std::size_t& pos) {
  if (pos >= s.size() || s[pos] < '0' || s[pos] > '9') return std::nullopt;
  std::size_t v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    if (v < 1000000) v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
    ++pos;
  }
  return v;
}

// Extracts the text between `<tag>` and `</tag>` (first occurrence); the
// open tag's trailing newline and the close tag's leading newline are not
// included. Empty optional when the open tag is missing; an unclosed tag
// yields everything to the end of the text.
inline std::optional<std::string> between_tags(std::string_view text, std::string_view tag) {
  std::string open = "<" + std::string(tag) + ">";
  std::string close = "</" + std::string(tag) + ">";
  std::size_t b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  b += open.size();
  if (b < text.size() && text[b] == '\n') ++b;
  std::size_t e = text.find(close, b);
  if (e == std::string_view::npos) return std::string(text.substr(b));
  std::size_t cut = e;
  if (cut > b && text[cut - 1] == '\n') --cut;
  return std::string(text.substr(b, cut - b));
}

}  // namespace criticloop
