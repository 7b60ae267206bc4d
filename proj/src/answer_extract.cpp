#include "criticloop/answer_extract.hpp"

#include <cstdint>
#include <vector>

#include "criticloop/text_util.hpp"

namespace criticloop {

namespace {

constexpr std::string_view kOpen = "\\boxed{";

std::string split_after_last_equals(std::string_view expr) {
  std::size_t eq = expr.rfind('=');
  if (eq == std::string_view::npos) return std::string(expr);
  return std::string(expr.substr(eq + 1));
}

}  // namespace

std::optional<BoxedAnswer> extract_boxed(std::string_view text) {
  std::optional<std::string> last_complete;
  std::string current;
  std::size_t depth = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, kOpen.size(), kOpen) == 0) {
      // A nested opener keeps only its backslash in the content; the rest of
      // the marker is consumed. Top-level openers contribute nothing.
      if (depth > 0) current += text[i];
      ++depth;
      i += kOpen.size();
    } else if (text[i] == '{' && depth > 0) {
      ++depth;
      current += text[i];
      ++i;
    } else if (text[i] == '}' && depth > 0) {
      --depth;
      if (depth > 0) {
        current += text[i];
      } else {
        last_complete = current;
        current.clear();
      }
      ++i;
    } else {
      if (depth > 0) current += text[i];
      ++i;
    }
  }
  if (!last_complete) return std::nullopt;

  BoxedAnswer out;
  out.raw_span = *last_complete;
  out.value_untrimmed = split_after_last_equals(out.raw_span);
  out.value = trim(out.value_untrimmed);
  return out;
}

namespace {

struct Rational {
  __int128 num = 0;
  __int128 den = 1;
};

// Parses a plain number: sign, digits with optional digit-group commas,
// optional fractional part, or an integer fraction "p/q". Rejects anything
// else, including strings that would overflow the 18-digit safety margin.
std::optional<Rational> parse_rational(std::string_view raw) {
  std::string s = trim(raw);
  if (s.empty()) return std::nullopt;

  std::size_t pos = 0;
  bool neg = false;
  if (s[pos] == '+' || s[pos] == '-') {
    neg = s[pos] == '-';
    ++pos;
  }

  std::string digits;
  bool seen_dot = false;
  std::size_t frac_digits = 0;
  std::size_t slash = std::string::npos;
  for (; pos < s.size(); ++pos) {
    char c = s[pos];
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
      if (seen_dot) ++frac_digits;
    } else if (c == ',' && !seen_dot) {
      // Digit-group comma: must sit between digits ("1,000").
      if (digits.empty() || pos + 1 >= s.size() || s[pos + 1] < '0' || s[pos + 1] > '9') return std::nullopt;
    } else if (c == '.' && !seen_dot && slash == std::string::npos) {
      seen_dot = true;
    } else if (c == '/' && !seen_dot && slash == std::string::npos && !digits.empty()) {
      slash = digits.size();
    } else {
      return std::nullopt;
    }
  }
  if (digits.empty() || digits.size() > 18) return std::nullopt;
  if (slash != std::string::npos && (slash == digits.size() || seen_dot)) return std::nullopt;

  auto to_int = [](std::string_view d) {
    __int128 v = 0;
    for (char c : d) v = v * 10 + (c - '0');
    return v;
  };

  Rational r;
  if (slash != std::string::npos) {
    r.num = to_int(std::string_view(digits).substr(0, slash));
    r.den = to_int(std::string_view(digits).substr(slash));
    if (r.den == 0) return std::nullopt;
  } else {
    r.num = to_int(digits);
    for (std::size_t k = 0; k < frac_digits; ++k) r.den *= 10;
  }
  if (neg) r.num = -r.num;
  return r;
}

}  // namespace

bool answers_equal(std::string_view a, std::string_view b, EqualityMode mode) {
  if (mode == EqualityMode::Numeric) {
    auto ra = parse_rational(a);
    auto rb = parse_rational(b);
    if (ra && rb) return ra->num * rb->den == rb->num * ra->den;
  }
  return trim(a) == trim(b);
}

BoxedAnswer boxed_value(std::string value) {
  BoxedAnswer b;
  b.raw_span = value;
  b.value_untrimmed = value;
  b.value = trim(value);
  return b;
}

}  // namespace criticloop
