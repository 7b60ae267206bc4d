#include <string>

#include "doctest.h"

#include "criticloop/answer_extract.hpp"

using namespace criticloop;

TEST_CASE("boxed extraction on ordinary completions") {
  auto a = extract_boxed("Therefore, it will take Carlos \\boxed{13} years before he starts.");
  REQUIRE(a.has_value());
  CHECK(a->value == "13");
  CHECK(a->raw_span == "13");

  CHECK_FALSE(extract_boxed("no box here").has_value());
  CHECK_FALSE(extract_boxed("").has_value());
}

TEST_CASE("the last complete box wins") {
  auto a = extract_boxed("\\boxed{1} then \\boxed{2}");
  REQUIRE(a.has_value());
  CHECK(a->value == "2");

  // A trailing box that never closes cannot displace an earlier complete one.
  auto b = extract_boxed("\\boxed{1} then \\boxed{2");
  REQUIRE(b.has_value());
  CHECK(b->value == "1");
}

TEST_CASE("nested braces are preserved verbatim") {
  auto a = extract_boxed("the eighth term is \\boxed{\\frac{243}{625}}");
  REQUIRE(a.has_value());
  CHECK(a->value == "\\frac{243}{625}");

  for (int k = 0; k <= 30; ++k) {
    std::string inner = std::string(k, '{') + "x" + std::string(k, '}');
    auto v = extract_boxed("\\boxed{" + inner + "}");
    REQUIRE(v.has_value());
    CHECK(v->value == inner);
  }
}

TEST_CASE("the value is the suffix after the last equals sign") {
  auto a = extract_boxed("\\boxed{x=5}");
  REQUIRE(a.has_value());
  CHECK(a->value == "5");
  CHECK(a->raw_span == "x=5");

  // Trimming applies to value only; the untrimmed form keeps the raw suffix.
  auto b = extract_boxed("\\boxed{x = 5}");
  REQUIRE(b.has_value());
  CHECK(b->value == "5");
  CHECK(b->value_untrimmed == " 5");
}

TEST_CASE("unclosed or empty boxes") {
  // Never closing at all means no answer.
  CHECK_FALSE(extract_boxed("\\boxed{2").has_value());
  // Nested content cannot rescue an outer box that never closes.
  CHECK_FALSE(extract_boxed("\\boxed{a {b}").has_value());

  // A completed empty box is a present, empty answer.
  auto e = extract_boxed("\\boxed{}");
  REQUIRE(e.has_value());
  CHECK(e->value == "");
}

TEST_CASE("color annotations survive as plain content") {
  auto a = extract_boxed("\\(\\boxed{ {\\color[HTML]{32cb00}27} }\\).");
  REQUIRE(a.has_value());
  CHECK(a->raw_span == " {\\color[HTML]{32cb00}27} ");
  CHECK(a->value == "{\\color[HTML]{32cb00}27}");
}

TEST_CASE("answer equality modes") {
  CHECK(answers_equal("13", "13", EqualityMode::Exact));
  CHECK(answers_equal("  13 ", "13", EqualityMode::Exact));
  CHECK_FALSE(answers_equal("\\frac{1}{2}", "0.5", EqualityMode::Exact));

  CHECK(answers_equal("13.0", "13", EqualityMode::Numeric));
  CHECK(answers_equal("1/2", "0.5", EqualityMode::Numeric));
  CHECK(answers_equal("1,000", "1000", EqualityMode::Numeric));
  CHECK(answers_equal("-3", "-3.00", EqualityMode::Numeric));
  CHECK_FALSE(answers_equal("13.5", "13", EqualityMode::Numeric));
  // Unparseable sides fall back to exact comparison.
  CHECK_FALSE(answers_equal("\\frac{1}{2}", "0.5", EqualityMode::Numeric));
  CHECK(answers_equal("abc", " abc ", EqualityMode::Numeric));
}

TEST_CASE("boxed_value wraps stored answers like the extractor would") {
  BoxedAnswer b = boxed_value("  7 ");
  CHECK(b.value == "7");
  CHECK(b.value_untrimmed == "  7 ");
}
