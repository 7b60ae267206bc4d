#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace criticloop {

// One extracted \boxed{...} payload.
//
// raw_span is the accumulated content between the outermost braces exactly as
// the scanner collected it (no trimming). value is the segment right of the
// last '=' inside raw_span (the whole span when there is no '='), with
// surrounding whitespace trimmed. The untrimmed variant is kept so the
// conformance tests can compare byte-for-byte against the reference
// extractor, which never trims.
struct BoxedAnswer {
  std::string raw_span;
  std::string value;
  std::string value_untrimmed;
};

// Scans `text` for \boxed{...} expressions and returns the last one that
// closes, mirroring the reference extraction script:
//  - the literal 7 characters "\boxed{" open an expression; plain braces
//    inside nest and are preserved in the content;
//  - a "\boxed{" nested inside an open expression contributes only its
//    backslash to the content (a quirk of the original scanner, kept for
//    parity) while still deepening the brace stack;
//  - when the outermost brace closes, the content is split on '=' and the
//    last segment is the value;
//  - an expression whose braces never close is discarded, so trailing
//    garbage falls back to the previous complete expression.
// Absent when no expression ever completes.
std::optional<BoxedAnswer> extract_boxed(std::string_view text);

enum class EqualityMode {
  Exact,    // trimmed string equality
  Numeric,  // rational comparison when both sides parse, else Exact
};

// Answer comparison used everywhere a prediction meets a gold answer.
// Numeric mode parses optional sign, digit-group commas, decimals, and
// simple integer fractions "p/q" into exact rationals (128-bit
// cross-multiplication); anything unparseable falls back to Exact.
bool answers_equal(std::string_view a, std::string_view b, EqualityMode mode);

// Wraps an already-extracted value (for records loaded from disk, where the
// original raw span is gone) so it can sit in the same optional<BoxedAnswer>
// slots the extractor fills.
BoxedAnswer boxed_value(std::string value);

}  // namespace criticloop
