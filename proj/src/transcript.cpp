#include "criticloop/transcript.hpp"

#include <algorithm>

#include "criticloop/text_util.hpp"

namespace criticloop {

namespace {

struct StepMarker {
  std::size_t index;       // the step number
  std::size_t line_begin;  // offset of the marker's line
  std::size_t text_begin;  // offset just past the ':'
};

bool at_line_start(std::string_view text, std::size_t pos) {
  return pos == 0 || text[pos - 1] == '\n';
}

// Matches "Step <i>:" at a line start, tolerating leading blanks, "[i]"
// brackets, and a parenthetical between the number and the colon.
std::optional<StepMarker> match_step_marker(std::string_view text, std::size_t line_begin) {
  std::size_t pos = skip_spaces(text, line_begin);
  if (!starts_with_ci(text, pos, "step")) return std::nullopt;
  pos += 4;
  std::size_t after_word = skip_spaces(text, pos);
  bool bracket = after_word < text.size() && text[after_word] == '[';
  if (bracket) ++after_word;
  // Require some separation between the word and the number ("Step3:" is
  // prose, "Step 3:" and "Step [3]:" are markers).
  if (after_word == pos && !bracket) return std::nullopt;
  pos = after_word;
  auto num = scan_number(text, pos);
  if (!num) return std::nullopt;
  if (bracket) {
    if (pos >= text.size() || text[pos] != ']') return std::nullopt;
    ++pos;
  }
  pos = skip_spaces(text, pos);
  if (pos < text.size() && text[pos] == '(') {
    std::size_t close = pos;
    while (close < text.size() && text[close] != ')' && text[close] != '\n') ++close;
    if (close >= text.size() || text[close] != ')') return std::nullopt;
    pos = skip_spaces(text, close + 1);
  }
  if (pos >= text.size() || text[pos] != ':') return std::nullopt;
  return StepMarker{*num, line_begin, pos + 1};
}

std::vector<StepMarker> find_step_markers(std::string_view text) {
  std::vector<StepMarker> markers;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!at_line_start(text, i)) continue;
    if (auto m = match_step_marker(text, i)) markers.push_back(*m);
  }
  return markers;
}

std::vector<std::string> slice_step_texts(std::string_view text, const std::vector<StepMarker>& markers) {
  std::vector<std::string> steps;
  steps.reserve(markers.size());
  for (std::size_t k = 0; k < markers.size(); ++k) {
    std::size_t end = (k + 1 < markers.size()) ? markers[k + 1].line_begin : text.size();
    steps.push_back(trim(text.substr(markers[k].text_begin, end - markers[k].text_begin)));
  }
  return steps;
}

}  // namespace

Attempt parse_attempt(std::string_view text) {
  auto markers = find_step_markers(text);
  bool has_one = std::any_of(markers.begin(), markers.end(),
                             [](const StepMarker& m) { return m.index == 1; });
  if (markers.empty() || !has_one)
    throw ParseError(ParseErrc::NoStepMarkers, "attempt has no \"Step 1:\" marker");
  for (std::size_t k = 0; k < markers.size(); ++k) {
    if (markers[k].index != k + 1)
      throw ParseError(ParseErrc::NonContiguousSteps,
                       "step markers are not contiguous from 1 (saw step " +
                           std::to_string(markers[k].index) + " at position " + std::to_string(k + 1) + ")");
  }

  Attempt att;
  att.raw = std::string(text);
  att.steps = slice_step_texts(text, markers);
  att.prediction = extract_boxed(text);
  return att;
}

namespace {

struct ConclusionLine {
  std::size_t index;
  int label;              // +1 / -1
  std::size_t line_begin;
  std::size_t line_end;   // end of the conclusion's line (exclusive)
};

// Line ends at the next '\n' (exclusive) or end of text.
std::size_t line_end_from(std::string_view text, std::size_t pos) {
  std::size_t e = text.find('\n', pos);
  return e == std::string_view::npos ? text.size() : e;
}

bool word_boundary(std::string_view text, std::size_t pos) {
  if (pos >= text.size()) return true;
  char c = lower(text[pos]);
  return !(c >= 'a' && c <= 'z');
}

// Detects range phrasing on a conclusion line that failed the single-step
// parse: "Step 7 to Step 24", "Step 4 through 6", "Steps 3 and 4",
// "Step 2-5". These are forbidden outright, and silently dropping them would
// miscount coverage, hence the dedicated error.
bool names_step_range(std::string_view line) {
  std::size_t first_step = std::string_view::npos;
  std::size_t step_count = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (!starts_with_ci(line, i, "step")) continue;
    std::size_t pos = i + 4;
    bool plural = pos < line.size() && lower(line[pos]) == 's';
    if (plural) ++pos;
    pos = skip_spaces(line, pos);
    if (pos < line.size() && line[pos] == '[') ++pos;
    std::size_t num_start = pos;
    if (!scan_number(line, pos)) continue;
    if (plural) return true;
    ++step_count;
    if (first_step == std::string_view::npos) first_step = num_start;
    // "Step 4 through 6", "Step 2-5", "Step 2 to 5": a connective right
    // after the number followed by another number.
    if (pos < line.size() && line[pos] == ']') ++pos;
    std::size_t after = skip_spaces(line, pos);
    bool connective = false;
    if (after < line.size() && (line[after] == '-' || line[after] == '\xe2' /* en dash lead byte */)) {
      connective = true;
      while (after < line.size() && line[after] != ' ' && !(line[after] >= '0' && line[after] <= '9')) ++after;
      after = skip_spaces(line, after);
    } else if (starts_with_ci(line, after, "to") && word_boundary(line, after + 2)) {
      connective = true;
      after = skip_spaces(line, after + 2);
    } else if (starts_with_ci(line, after, "through") && word_boundary(line, after + 7)) {
      connective = true;
      after = skip_spaces(line, after + 7);
    } else if (starts_with_ci(line, after, "and") && word_boundary(line, after + 3)) {
      connective = true;
      after = skip_spaces(line, after + 3);
    }
    if (connective) {
      if (starts_with_ci(line, after, "step")) after = skip_spaces(line, after + 4);
      if (after < line.size() && line[after] == '[') ++after;
      if (scan_number(line, after)) return true;
    }
  }
  return step_count >= 2;
}

// Parses one conclusion line. Returns the verdict when it is a well-formed
// single-step conclusion, throws on range phrasing, and returns nullopt for
// anything else (such lines read as analysis prose).
std::optional<ConclusionLine> parse_conclusion_line(std::string_view text, std::size_t line_begin,
                                                    std::size_t colon_pos) {
  std::size_t lend = line_end_from(text, line_begin);
  std::string_view rest = text.substr(colon_pos + 1, lend - colon_pos - 1);

  std::size_t pos = skip_spaces(rest, 0);
  if (starts_with_ci(rest, pos, "step")) {
    std::size_t p = skip_spaces(rest, pos + 4);
    bool bracket = p < rest.size() && rest[p] == '[';
    if (bracket) ++p;
    auto num = scan_number(rest, p);
    if (num) {
      if (bracket && p < rest.size() && rest[p] == ']') ++p;
      std::size_t q = skip_spaces(rest, p);
      if (starts_with_ci(rest, q, "is") && word_boundary(rest, q + 2)) {
        q = skip_spaces(rest, q + 2);
        int label = 0;
        if (starts_with_ci(rest, q, "incorrect") && word_boundary(rest, q + 9)) label = -1;
        else if (starts_with_ci(rest, q, "correct") && word_boundary(rest, q + 7)) label = +1;
        if (label != 0) return ConclusionLine{*num, label, line_begin, lend};
      }
    }
  }
  if (names_step_range(rest))
    throw ParseError(ParseErrc::MultiStepConclusion,
                     "conclusion names a range of steps: \"" + trim(rest) + "\"");
  return std::nullopt;
}

std::vector<ConclusionLine> find_conclusions(std::string_view text) {
  std::vector<ConclusionLine> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!at_line_start(text, i)) continue;
    std::size_t pos = skip_spaces(text, i);
    if (!starts_with_ci(text, pos, "conclusion")) continue;
    pos = skip_spaces(text, pos + 10);
    if (pos >= text.size() || text[pos] != ':') continue;
    if (auto c = parse_conclusion_line(text, i, pos)) out.push_back(*c);
  }
  return out;
}

Critique build_critique(std::string_view text, std::vector<ConclusionLine> conclusions,
                        std::size_t n_steps, bool enforce_coverage) {
  if (conclusions.empty())
    throw ParseError(ParseErrc::NoConclusions, "critique contains no step conclusions");

  // Evaluation stops at the first error; anything after it (usually the
  // correction block) is not a verdict.
  std::size_t keep = conclusions.size();
  for (std::size_t k = 0; k < conclusions.size(); ++k) {
    if (conclusions[k].label < 0) {
      keep = k + 1;
      break;
    }
  }
  conclusions.resize(keep);

  for (std::size_t k = 0; k < conclusions.size(); ++k) {
    if (conclusions[k].index != k + 1)
      throw ParseError(ParseErrc::OutOfOrder,
                       "conclusion indices are not 1, 2, 3, ... (saw step " +
                           std::to_string(conclusions[k].index) + " at position " + std::to_string(k + 1) + ")");
  }

  bool has_flag = conclusions.back().label < 0;
  if (!has_flag && enforce_coverage && conclusions.size() < n_steps)
    throw ParseError(ParseErrc::IncompleteCoverage,
                     "fully positive critique covers " + std::to_string(conclusions.size()) +
                         " of " + std::to_string(n_steps) + " steps");

  Critique cri;
  cri.raw = std::string(text);
  std::size_t prev_end = 0;
  for (const auto& c : conclusions) {
    StepVerdict v;
    v.index = c.index;
    v.label = c.label;
    v.block_begin = prev_end;
    v.block_end = c.line_end;
    v.analysis = trim(text.substr(prev_end, c.line_begin - prev_end));
    cri.verdicts.push_back(std::move(v));
    prev_end = c.line_end;
  }
  if (has_flag) cri.first_error = conclusions.back().index;
  return cri;
}

}  // namespace

Critique parse_critique(std::string_view text, std::size_t n_steps) {
  return build_critique(text, find_conclusions(text), n_steps, /*enforce_coverage=*/true);
}

Critique parse_flat_labels(std::string_view text, std::size_t n_steps, FlatFormat format) {
  if (format == FlatFormat::OutcomeLabel) {
    Critique cri;
    cri.raw = std::string(text);
    bool positive = find_ci(text, "is correct") != std::string_view::npos &&
                    find_ci(text, "each step from step") != std::string_view::npos;
    bool negative = find_ci(text, "is incorrect") != std::string_view::npos &&
                    find_ci(text, "some step from step") != std::string_view::npos;
    if (negative) {
      // No location information: flag the first step.
      StepVerdict v;
      v.index = 1;
      v.label = -1;
      v.block_begin = 0;
      v.block_end = text.size();
      cri.verdicts.push_back(std::move(v));
      cri.first_error = 1;
      return cri;
    }
    if (positive) {
      for (std::size_t i = 1; i <= n_steps; ++i) {
        StepVerdict v;
        v.index = i;
        v.label = +1;
        v.block_begin = 0;
        v.block_end = text.size();
        cri.verdicts.push_back(std::move(v));
      }
      return cri;
    }
    throw ParseError(ParseErrc::UnrecognizedFormat, "outcome label sentence not recognized");
  }

  // ProcessLabel: bare "Step i is correct." lines, one per step.
  std::vector<ConclusionLine> lines;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!at_line_start(text, i)) continue;
    std::size_t pos = skip_spaces(text, i);
    if (!starts_with_ci(text, pos, "step")) continue;
    std::size_t p = skip_spaces(text, pos + 4);
    auto num = scan_number(text, p);
    if (!num) continue;
    std::size_t q = skip_spaces(text, p);
    if (!(starts_with_ci(text, q, "is") && word_boundary(text, q + 2))) continue;
    q = skip_spaces(text, q + 2);
    int label = 0;
    if (starts_with_ci(text, q, "incorrect") && word_boundary(text, q + 9)) label = -1;
    else if (starts_with_ci(text, q, "correct") && word_boundary(text, q + 7)) label = +1;
    if (label == 0) continue;
    lines.push_back(ConclusionLine{*num, label, i, line_end_from(text, i)});
  }
  try {
    return build_critique(text, std::move(lines), n_steps, /*enforce_coverage=*/true);
  } catch (const ParseError& e) {
    throw ParseError(ParseErrc::UnrecognizedFormat,
                     std::string("process label lines unusable: ") + e.what());
  }
}

std::optional<Correction> extract_correction(std::string_view text,
                                             std::optional<std::size_t> fallback_start) {
  auto body = between_tags(text, "correction");
  if (!body) return std::nullopt;

  Correction corr;
  corr.raw = *body;
  corr.prediction = extract_boxed(*body);

  auto markers = find_step_markers(*body);
  if (markers.empty()) {
    corr.start_index = fallback_start.value_or(1);
    corr.steps.push_back(trim(*body));
  } else {
    corr.start_index = markers.front().index;
    corr.steps = slice_step_texts(*body, markers);
  }
  return corr;
}

Correction correction_or_salvage(std::string_view completion,
                                 std::optional<std::size_t> fallback_start) {
  if (auto corr = extract_correction(completion, fallback_start)) return *corr;
  // No delimiters anywhere: treat the completion itself as the body by
  // re-running the extraction on a wrapped copy, so both paths share one
  // body parser.
  std::string wrapped = "<correction>\n" + std::string(completion) + "\n</correction>";
  return *extract_correction(wrapped, fallback_start);
}

Attempt splice(const Attempt& attempt, const Correction& correction) {
  if (correction.start_index < 1 || correction.start_index > attempt.steps.size() + 1)
    throw ParseError(ParseErrc::IndexOutOfRange,
                     "correction starts at step " + std::to_string(correction.start_index) +
                         " of a " + std::to_string(attempt.steps.size()) + "-step attempt");

  Attempt out;
  out.question_id = attempt.question_id;
  out.steps.assign(attempt.steps.begin(), attempt.steps.begin() + (correction.start_index - 1));
  out.steps.insert(out.steps.end(), correction.steps.begin(), correction.steps.end());
  out.raw = render_attempt(out.steps);
  out.prediction = extract_boxed(out.raw);
  return out;
}

std::string render_attempt(const std::vector<std::string>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out += "\n\n";
    out += "Step " + std::to_string(i + 1) + ": " + steps[i];
  }
  return out;
}

std::string last_step_block(const Critique& critique) {
  if (critique.verdicts.empty()) return {};
  const StepVerdict& v = critique.verdicts.back();
  return trim(std::string_view(critique.raw).substr(v.block_begin, v.block_end - v.block_begin));
}

}  // namespace criticloop
