#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "criticloop/backend.hpp"
#include "criticloop/dataset.hpp"
#include "criticloop/prompts.hpp"
#include "criticloop/transcript.hpp"

namespace criticloop {

struct RefineParams {
  int depth = 8;     // flagged rounds tolerated before a restart (d)
  int restarts = 8;  // restarts tolerated before giving up (n)
};

// One correction round: the refiner's proposal for the flagged step, followed
// by a fresh critique of the spliced attempt. Restarts are not rounds; they
// reuse the initial attempt and its critique without any model call.
struct RefineRound {
  Correction correction;
  std::string critique;  // raw re-critique text of the spliced attempt
  bool critique_flagged = false;
  std::optional<std::size_t> flagged_step;
  std::optional<std::string> prediction_after;  // live answer once spliced
  std::vector<std::string> notes;  // salvaged corrections, clamps, malformed critiques
};

// Full ledger of one iterative-refine run. invocations counts completions
// actually issued and always equals 2·(1 + rounds.size()): one solve plus the
// initial critique, then a refine + re-critique pair per round. gold and
// level ride along so evaluation needs no second look at the dataset.
struct RefineTrace {
  std::string question_id;
  std::string gold;
  std::optional<int> level;
  Attempt initial;
  std::string initial_critique;
  bool initial_flagged = false;
  std::vector<RefineRound> rounds;
  int restarts_used = 0;
  Attempt final_attempt;  // most recent attempt at termination
  bool validated = false; // last critique found nothing to flag
  int invocations = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
  std::vector<std::string> notes;
};

// Solve once, then critique/refine in place until the critic passes the
// attempt; after `depth` flagged rounds, throw the refinements away and
// restart from the initial attempt (and its already-known critique, without
// re-solving or re-critiquing), at most `restarts` times. A critique that
// fails to parse counts as flagging the last step, so the loop never stalls
// on a malformed completion. If nothing ever validates, the most recent
// attempt is returned.
RefineTrace iterative_refine(const Question& question, Backend& solver, Backend& critic,
                             Backend& refiner, const TemplateSet& templates,
                             const RefineParams& params);

struct FilterParams {
  int malformed_retry = 2;  // extra critique calls for an unparseable critique
  EqualityMode equality = EqualityMode::Numeric;
};

struct FilterSample {
  Attempt attempt;
  std::optional<std::string> prediction;
  std::string critique;   // raw text of the accepted (or last) critique
  bool flagged = false;
  bool malformed = false; // critique never parsed; sample excluded like a flag
  bool kept = false;
};

// Outcome of critique-gated majority voting over one question's samples.
// plain_voted is the ungated vote over the same samples, kept as the
// baseline column. When no sample survives the gate, voted falls back to the
// plain vote and used_fallback records that.
struct FilterResult {
  std::string question_id;
  std::string gold;
  std::optional<int> level;
  std::vector<FilterSample> samples;
  std::optional<std::string> voted;
  std::optional<std::string> plain_voted;
  bool used_fallback = false;
  int invocations = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
};

// Critiques each attempt once (plus a small retry budget for critiques that
// fail to parse) and votes over the samples whose critique found no error.
FilterResult critic_filter(const Question& question, const std::vector<Attempt>& attempts,
                           Backend& critic, const TemplateSet& templates,
                           const FilterParams& params);

// Samples `n` solutions and runs critic_filter over them; the sampling calls
// are charged to the result's invocation and token counters.
FilterResult run_filter_question(const Question& question, Backend& generator, Backend& critic,
                                 const TemplateSet& templates, int n, const FilterParams& params);

// Most frequent answer under the equality mode; ties break to the earliest
// first occurrence; empty input yields no answer. The winner is returned as
// its first-occurrence spelling.
std::optional<std::string> majority_vote(const std::vector<std::string>& answers,
                                         EqualityMode mode);

// True when any answer equals gold under the equality mode.
bool pass_at_n(const std::vector<std::string>& answers, const std::string& gold,
               EqualityMode mode);

// Trace (de)serialization for the runner's JSONL artifacts and the evaluator.
nlohmann::json trace_to_json(const RefineTrace& trace);
RefineTrace trace_from_json(const nlohmann::json& j);
nlohmann::json filter_to_json(const FilterResult& result);
FilterResult filter_from_json(const nlohmann::json& j);

}  // namespace criticloop
