#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "criticloop/answer_extract.hpp"

namespace criticloop {

enum class ParseErrc {
  NoStepMarkers,
  NonContiguousSteps,
  NoConclusions,
  OutOfOrder,
  IncompleteCoverage,
  MultiStepConclusion,
  UnrecognizedFormat,
  IndexOutOfRange,
};

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ParseErrc code() const { return code_; }

 private:
  ParseErrc code_;
};

// A multi-step solution. steps holds the text after each "Step i:" marker;
// prediction is the last boxed expression of the whole text (absent when the
// model never boxed an answer).
struct Attempt {
  std::string question_id;
  std::vector<std::string> steps;
  std::optional<BoxedAnswer> prediction;
  std::string raw;
};

// One step's judgment inside a critique. analysis is the free text between
// the previous conclusion line and this one; block_begin/block_end delimit
// analysis plus the conclusion line itself inside Critique::raw, so callers
// can lift the final verdict block verbatim (refinement prompts and R records
// both need the original bytes, not a re-rendering).
struct StepVerdict {
  std::size_t index = 0;
  std::string analysis;
  int label = 0;  // +1 correct, -1 incorrect
  std::size_t block_begin = 0;
  std::size_t block_end = 0;
};

// Step-wise critique. Evaluation stops at the first error: at most one -1
// verdict, always the last entry.
struct Critique {
  std::vector<StepVerdict> verdicts;
  std::optional<std::size_t> first_error;
  std::string raw;

  bool flagged() const { return first_error.has_value(); }
};

// Replacement steps starting at start_index (1-based). steps are the
// corrected step texts in order; prediction is the last boxed expression of
// the correction body.
struct Correction {
  std::size_t start_index = 0;
  std::vector<std::string> steps;
  std::optional<BoxedAnswer> prediction;
  std::string raw;
};

// Splits a solution on "Step i:" markers. Markers are matched at line start
// with flexible casing/whitespace, tolerate "[i]" brackets, and a
// parenthetical like "Step 3 (Corrected):" is stripped. Text before the
// first marker is dropped; text after the last marker belongs to that step.
// Throws NoStepMarkers when no "Step 1:" exists, NonContiguousSteps when the
// indices are not exactly 1, 2, ..., n in order.
Attempt parse_attempt(std::string_view text);

// Scans "Conclusion: Step i is correct|incorrect" lines. Verdicts stop at the
// first incorrect; later conclusions are ignored (correction text usually
// follows). A critique with no incorrect verdict must cover steps 1..n_steps.
// Throws NoConclusions, OutOfOrder (indices not 1, 2, 3, ...; duplicates
// included), IncompleteCoverage, or MultiStepConclusion (a conclusion naming
// a range of steps).
Critique parse_critique(std::string_view text, std::size_t n_steps);

enum class FlatFormat {
  ProcessLabel,  // bare "Step i is correct." lines
  OutcomeLabel,  // one whole-attempt sentence
};

// Parses the ablation label formats into the same Critique shape (empty
// analyses). OutcomeLabel's "Some step ... is incorrect" carries no location,
// so it becomes a single -1 at step 1. Throws UnrecognizedFormat.
Critique parse_flat_labels(std::string_view text, std::size_t n_steps, FlatFormat format);

// Pulls the <correction>...</correction> body out of a completion. An
// unclosed tag runs to the end of the text; no tag at all yields nullopt.
// start_index comes from the first step marker in the body; a body with no
// markers becomes a single step at fallback_start (the flagged step index the
// caller already knows, else 1).
std::optional<Correction> extract_correction(std::string_view text,
                                             std::optional<std::size_t> fallback_start = std::nullopt);

// Lenient variant for refinement completions: when the delimiters are missing
// entirely, the whole completion is taken as the correction body, so a model
// that forgot the tags still yields a judgeable (usually failing) refinement
// instead of voiding the round.
Correction correction_or_salvage(std::string_view completion,
                                 std::optional<std::size_t> fallback_start = std::nullopt);

// Keeps steps [1, correction.start_index) of the attempt and appends the
// correction's steps, renumbered contiguously. The result is re-rendered
// canonically and its prediction re-extracted. Throws IndexOutOfRange unless
// 1 <= start_index <= steps.size() + 1.
Attempt splice(const Attempt& attempt, const Correction& correction);

// Canonical rendering: "Step i: text" blocks separated by blank lines.
// parse_attempt(render_attempt(steps)) recovers the step texts.
std::string render_attempt(const std::vector<std::string>& steps);

// The final verdict's analysis plus its conclusion line, sliced verbatim from
// critique.raw. This is what a refinement prompt's criticism block and an R
// record's critique field carry.
std::string last_step_block(const Critique& critique);

}  // namespace criticloop
