#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "criticloop/backend.hpp"
#include "criticloop/dataset.hpp"
#include "criticloop/prompts.hpp"
#include "criticloop/weak_supervision.hpp"

namespace criticloop {

enum class HintMode { None, ReferenceHint };

// Knobs for one construction run. Stage 1 samples a fixed number of solutions
// per question; stage 2 samples balanced correct/incorrect buckets. The
// semantic_retry budget (K) caps how many critiques are tried per attempt
// before it is skipped; transport retries are a separate backend concern.
struct StageConfig {
  int stage = 1;
  int solutions_per_question = 10;  // stage 1
  int balanced_m = 5;               // stage 2, per bucket
  int sample_cap = 512;             // stage 2, total draws
  int semantic_retry = 16;          // K
  HintMode hint_mode = HintMode::None;
  EqualityMode equality = EqualityMode::Numeric;
};

// Per-question counters the manifest stores. Call counts are completions
// actually issued; tokens/latency are summed over them.
struct QuestionOutcome {
  int attempts = 0;           // sampled attempts examined
  int collected_c = 0;
  int collected_r = 0;
  int skipped = 0;            // attempts dropped after the semantic budget
  int dropped_delimiter = 0;  // records lost because hint removal mangled them
  int malformed_attempts = 0; // solve completions with no parseable steps
  int generator_calls = 0;
  int student_calls = 0;      // stage-2 student critiques + refinements
  int teacher_calls = 0;      // stage-1 collection, stage-2 fallback
  int hint_removal_calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
  std::string error;          // non-empty when the question failed outright
};

struct QuestionStageOutput {
  std::vector<SupervisionRecord> records;
  QuestionOutcome outcome;
};

struct StageResult {
  std::vector<SupervisionRecord> records;  // question-id-sorted
  std::map<std::string, QuestionOutcome> outcomes;
};

struct BalancedSample {
  std::vector<Attempt> positives;
  std::vector<Attempt> negatives;
  int draws = 0;
};

// Samples solutions until each bucket holds m attempts or cap draws total.
// Buckets may come back short (or empty); that is not an error. Every draw is
// charged to outcome when one is supplied, including overflow and completions
// that fail to parse as attempts.
BalancedSample sample_balanced(const Question& question, Backend& generator,
                               const TemplateSet& templates, int m, int cap, EqualityMode mode,
                               QuestionOutcome* outcome = nullptr);

// One hint-removal completion per try, up to semantic_retry tries. A cleaned
// text is accepted when it preserves the <correction> delimiters the input
// had and satisfies the caller's extra predicate (when given). nullopt means
// the record should be dropped.
std::optional<std::string> remove_hints(
    const std::string& critique_text, Backend& teacher, const TemplateSet& templates,
    const std::string& question_id, int semantic_retry, QuestionOutcome* outcome = nullptr,
    const std::function<bool(const std::string&)>& accept = {});

// Runs the single-call collect flow (critique with inline correction) for one
// attempt: render the collect prompt (hinted per config), parse, classify,
// and either return the records or retry, up to semantic_retry tries. Hinted
// critiques are cleaned through remove_hints before storage; a cleaning that
// loses delimiters, leaks hint phrases, or changes the classification is
// retried and finally dropped.
struct CollectFlowResult {
  std::vector<SupervisionRecord> records;
  bool collected = false;
  bool dropped_by_hint_removal = false;
};
CollectFlowResult collect_flow(const Question& question, const Attempt& attempt, Backend& model,
                               const std::string& model_role, const TemplateSet& templates,
                               const StageConfig& config, QuestionOutcome* outcome = nullptr);

// Per-question stage pipelines. Failures are captured in outcome.error rather
// than thrown, so a batch keeps going when one question dies.
QuestionStageOutput run_stage1_question(const Question& question, Backend& generator,
                                        Backend& teacher, const std::string& teacher_role,
                                        const TemplateSet& templates, const StageConfig& config);

QuestionStageOutput run_stage2_question(const Question& question, Backend& generator,
                                        Backend& student, const std::string& student_role,
                                        Backend* teacher, const std::string& teacher_role,
                                        const TemplateSet& templates, const StageConfig& config);

// Serial batch drivers over the per-question pipelines; records come back
// sorted by question id (stable within a question) so output bytes do not
// depend on scheduling.
StageResult build_stage1(const std::vector<Question>& questions, Backend& generator,
                         Backend& teacher, const std::string& teacher_role,
                         const TemplateSet& templates, const StageConfig& config);

StageResult build_stage2(const std::vector<Question>& questions, Backend& generator,
                         Backend& student, const std::string& student_role, Backend* teacher,
                         const std::string& teacher_role, const TemplateSet& templates,
                         const StageConfig& config);

// Converts externally critiqued data (step labels supplied in the input, no
// model calls) into the same record stream. Input JSONL lines:
//   {"question_id": ..., "steps": [...], "prediction": ...,
//    "labels": [1, 1, -1], "correction"?: {"start_index", "steps", "prediction"}}
// Lines that do not classify to a Collect action are skipped with a manifest
// note; labels past the first -1 are ignored per the stopping rule.
StageResult import_precritiqued(const std::vector<Question>& questions,
                                const std::string& records_path, const StageConfig& config);

// Record (de)serialization, shared by the batch writers, --resume merging,
// and the import path. One compact JSON object per record; keys are sorted by
// the JSON library, so bytes are stable.
nlohmann::json record_to_json(const SupervisionRecord& record);
SupervisionRecord record_from_json(const nlohmann::json& j);
std::string records_to_jsonl(const std::vector<SupervisionRecord>& records);

// Manifest serialization for one question's outcome.
nlohmann::json outcome_to_json(const QuestionOutcome& outcome);
QuestionOutcome outcome_from_json(const nlohmann::json& j);

}  // namespace criticloop
