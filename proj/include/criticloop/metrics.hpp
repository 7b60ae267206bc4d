#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "criticloop/dataset.hpp"
#include "criticloop/inference.hpp"

namespace criticloop {

enum class MetricsErrc {
  MissingReference,  // difficulty needs a level or a reference solution
  LedgerMismatch,    // closed-form invocation count disagrees with the traces
};

class MetricsError : public std::runtime_error {
 public:
  MetricsError(MetricsErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  MetricsErrc code() const { return code_; }

 private:
  MetricsErrc code_;
};

// Error-detection confusion counts. "Positive" is a wrong attempt, so tp is a
// wrong attempt the critique flagged.
struct ConfusionCounts {
  std::int64_t tp = 0;  // wrong, flagged
  std::int64_t fp = 0;  // correct, flagged
  std::int64_t fn = 0;  // wrong, unflagged
  std::int64_t tn = 0;  // correct, unflagged
  std::int64_t total() const { return tp + fp + fn + tn; }
};

// A rate whose 0/0 case is reported as 0 with the degenerate marker set, so
// report schemas keep every cell.
struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

struct CriticMetrics {
  ConfusionCounts counts;
  MetricValue precision;  // tp / (tp + fp)
  MetricValue recall;     // tp / (tp + fn)
  MetricValue f1;         // 2PR / (P + R)
  MetricValue accuracy;   // (tp + tn) / total
};

struct CriticInstance {
  bool attempt_correct = false;
  bool has_flag = false;
};

ConfusionCounts count_confusion(const std::vector<CriticInstance>& instances);
CriticMetrics critic_metrics(const std::vector<CriticInstance>& instances);

// Accuracy of the live answer after `round` correction rounds, plus the
// transition rates over traces whose initial critique flagged an error.
// Traces shorter than `round` contribute their final per-round state.
struct RefineRoundStats {
  int round = 0;
  int traces = 0;
  int flagged_traces = 0;  // flagged at round 0
  double acc_at_round = 0.0;
  MetricValue true_to_true;   // initially correct flagged traces still correct
  MetricValue false_to_true;  // initially wrong flagged traces now correct
};

RefineRoundStats refine_accuracy(const std::vector<RefineTrace>& traces, int round,
                                 EqualityMode mode);

// The live answer a trace holds after `round` correction rounds (round 0 is
// the initial attempt); shared by refine_accuracy and its test oracles.
std::optional<std::string> answer_at_round(const RefineTrace& trace, int round);

// Question difficulty: an explicit level field wins; otherwise the count of
// "<<...>>" calculator annotations in the reference solution, falling back to
// the count of '='-bearing lines when no annotation exists, clamped to 1..5.
// Both counts are kept for audit.
struct DifficultyInfo {
  int level = 1;
  int annotation_spans = 0;
  int equation_lines = 0;
  bool from_level_field = false;
};

DifficultyInfo difficulty_level(const Question& question);

// Closed-form invocation accounting over refine traces: 2 calls per case
// (solve + first critique) plus 2 per correction round. Every trace's own
// ledger must agree or the report refuses to pretend.
struct InvocationReport {
  std::int64_t cases = 0;
  std::int64_t rounds = 0;
  std::int64_t invocations = 0;
};

InvocationReport invocation_report(const std::vector<RefineTrace>& traces);

struct LevelStats {
  int refine_count = 0;
  double top1 = 0.0;
  double refine_final = 0.0;
  int filter_count = 0;
  double maj1 = 0.0;
  double critic_maj1 = 0.0;
};

// Everything the eval command reports. The refine block comes from
// iterative-refine traces, the vote block from filter results; either side
// may be empty. Critic metrics are reported both ways the malformed-critique
// question can be answered: counted as flags, and left out entirely.
struct EvalReport {
  int refine_cases = 0;
  double top1 = 0.0;          // round-0 accuracy
  double refine_final = 0.0;  // final-attempt accuracy
  double validated_rate = 0.0;
  std::vector<RefineRoundStats> rounds;  // index == round, 0..max
  InvocationReport invocations;

  int filter_cases = 0;
  double maj1 = 0.0;
  double critic_maj1 = 0.0;
  double pass1 = 0.0;
  CriticMetrics critic_malformed_as_flagged;
  CriticMetrics critic_malformed_excluded;

  // Keyed by difficulty level; questions with no level land in bucket 0.
  std::map<int, LevelStats> levels;

  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
  std::int64_t total_invocations = 0;  // refine + filter calls
};

EvalReport evaluate(const std::vector<RefineTrace>& traces,
                    const std::vector<FilterResult>& filters, EqualityMode mode);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace criticloop
