#include "criticloop/metrics.hpp"

#include <algorithm>

#include "criticloop/answer_extract.hpp"

namespace criticloop {

namespace {

using json = nlohmann::json;

MetricValue ratio(std::int64_t num, std::int64_t den) {
  MetricValue v;
  if (den == 0) {
    v.degenerate = true;
    v.value = 0.0;
  } else {
    v.value = static_cast<double>(num) / static_cast<double>(den);
  }
  return v;
}

bool matches_gold(const std::optional<std::string>& answer, const std::string& gold,
                  EqualityMode mode) {
  return answer && answers_equal(*answer, gold, mode);
}

}  // namespace

ConfusionCounts count_confusion(const std::vector<CriticInstance>& instances) {
  ConfusionCounts c;
  for (const CriticInstance& inst : instances) {
    if (!inst.attempt_correct && inst.has_flag) ++c.tp;
    else if (inst.attempt_correct && inst.has_flag) ++c.fp;
    else if (!inst.attempt_correct && !inst.has_flag) ++c.fn;
    else ++c.tn;
  }
  return c;
}

CriticMetrics critic_metrics(const std::vector<CriticInstance>& instances) {
  CriticMetrics m;
  m.counts = count_confusion(instances);
  m.precision = ratio(m.counts.tp, m.counts.tp + m.counts.fp);
  m.recall = ratio(m.counts.tp, m.counts.tp + m.counts.fn);
  if (m.precision.degenerate && m.recall.degenerate) {
    m.f1 = MetricValue{0.0, true};
  } else {
    double p = m.precision.value;
    double r = m.recall.value;
    m.f1 = (p + r == 0.0) ? MetricValue{0.0, true} : MetricValue{2.0 * p * r / (p + r), false};
  }
  m.accuracy = ratio(m.counts.tp + m.counts.tn, m.counts.total());
  return m;
}

std::optional<std::string> answer_at_round(const RefineTrace& trace, int round) {
  if (round < 0) round = 0;
  std::size_t available = trace.rounds.size();
  std::size_t use = std::min<std::size_t>(static_cast<std::size_t>(round), available);
  if (use == 0)
    return trace.initial.prediction ? std::optional<std::string>(trace.initial.prediction->value)
                                    : std::nullopt;
  return trace.rounds[use - 1].prediction_after;
}

RefineRoundStats refine_accuracy(const std::vector<RefineTrace>& traces, int round,
                                 EqualityMode mode) {
  RefineRoundStats stats;
  stats.round = round;
  stats.traces = static_cast<int>(traces.size());

  int correct = 0;
  int flagged_true_before = 0;
  int flagged_false_before = 0;
  int flagged_true_now = 0;   // initially correct, correct at this round
  int flagged_false_now = 0;  // initially wrong, correct at this round

  for (const RefineTrace& trace : traces) {
    bool now = matches_gold(answer_at_round(trace, round), trace.gold, mode);
    if (now) ++correct;
    if (!trace.initial_flagged) continue;
    ++stats.flagged_traces;
    bool before = matches_gold(answer_at_round(trace, 0), trace.gold, mode);
    if (before) {
      ++flagged_true_before;
      if (now) ++flagged_true_now;
    } else {
      ++flagged_false_before;
      if (now) ++flagged_false_now;
    }
  }

  stats.acc_at_round =
      traces.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(traces.size());
  stats.true_to_true = ratio(flagged_true_now, flagged_true_before);
  stats.false_to_true = ratio(flagged_false_now, flagged_false_before);
  return stats;
}

DifficultyInfo difficulty_level(const Question& question) {
  DifficultyInfo info;

  if (question.reference_solution) {
    const std::string& ref = *question.reference_solution;
    std::size_t pos = 0;
    while ((pos = ref.find("<<", pos)) != std::string::npos) {
      std::size_t close = ref.find(">>", pos + 2);
      if (close == std::string::npos) break;
      ++info.annotation_spans;
      pos = close + 2;
    }
    std::size_t line_start = 0;
    while (line_start <= ref.size()) {
      std::size_t line_end = ref.find('\n', line_start);
      if (line_end == std::string::npos) line_end = ref.size();
      if (ref.find('=', line_start) < line_end) ++info.equation_lines;
      if (line_end == ref.size()) break;
      line_start = line_end + 1;
    }
  }

  if (question.level) {
    info.level = *question.level;
    info.from_level_field = true;
    return info;
  }
  if (!question.reference_solution)
    throw MetricsError(MetricsErrc::MissingReference,
                       question.id + ": no level field and no reference solution to count");

  int n = info.annotation_spans > 0 ? info.annotation_spans : info.equation_lines;
  info.level = std::max(1, std::min(5, n));
  return info;
}

InvocationReport invocation_report(const std::vector<RefineTrace>& traces) {
  InvocationReport report;
  std::int64_t ledger_sum = 0;
  for (const RefineTrace& trace : traces) {
    std::int64_t rounds = static_cast<std::int64_t>(trace.rounds.size());
    if (trace.invocations != 2 + 2 * rounds)
      throw MetricsError(MetricsErrc::LedgerMismatch,
                         trace.question_id + ": ledger says " + std::to_string(trace.invocations) +
                             " invocations for " + std::to_string(rounds) + " rounds");
    ++report.cases;
    report.rounds += rounds;
    ledger_sum += trace.invocations;
  }
  report.invocations = 2 * report.cases + 2 * report.rounds;
  if (report.invocations != ledger_sum)
    throw MetricsError(MetricsErrc::LedgerMismatch,
                       "closed form " + std::to_string(report.invocations) +
                           " != ledger sum " + std::to_string(ledger_sum));
  return report;
}

EvalReport evaluate(const std::vector<RefineTrace>& traces,
                    const std::vector<FilterResult>& filters, EqualityMode mode) {
  EvalReport report;

  report.refine_cases = static_cast<int>(traces.size());
  std::size_t max_rounds = 0;
  int top1_correct = 0;
  int final_correct = 0;
  int validated = 0;
  for (const RefineTrace& trace : traces) {
    max_rounds = std::max(max_rounds, trace.rounds.size());
    bool initial_ok = matches_gold(answer_at_round(trace, 0), trace.gold, mode);
    bool final_ok = trace.final_attempt.prediction &&
                    answers_equal(trace.final_attempt.prediction->value, trace.gold, mode);
    if (initial_ok) ++top1_correct;
    if (final_ok) ++final_correct;
    if (trace.validated) ++validated;
    report.prompt_tokens += trace.prompt_tokens;
    report.completion_tokens += trace.completion_tokens;
    report.latency_s += trace.latency_s;
    report.total_invocations += trace.invocations;

    int level = trace.level.value_or(0);
    LevelStats& stats = report.levels[level];
    ++stats.refine_count;
    if (initial_ok) stats.top1 += 1.0;
    if (final_ok) stats.refine_final += 1.0;
  }
  if (!traces.empty()) {
    report.top1 = static_cast<double>(top1_correct) / traces.size();
    report.refine_final = static_cast<double>(final_correct) / traces.size();
    report.validated_rate = static_cast<double>(validated) / traces.size();
    for (int r = 0; r <= static_cast<int>(max_rounds); ++r)
      report.rounds.push_back(refine_accuracy(traces, r, mode));
    report.invocations = invocation_report(traces);
  }

  report.filter_cases = static_cast<int>(filters.size());
  int maj_correct = 0;
  int critic_maj_correct = 0;
  int pass_correct = 0;
  std::vector<CriticInstance> with_malformed;
  std::vector<CriticInstance> without_malformed;
  for (const FilterResult& result : filters) {
    bool maj_ok = matches_gold(result.plain_voted, result.gold, mode);
    bool critic_ok = matches_gold(result.voted, result.gold, mode);
    if (maj_ok) ++maj_correct;
    if (critic_ok) ++critic_maj_correct;

    std::vector<std::string> answers;
    for (const FilterSample& sample : result.samples)
      if (sample.prediction) answers.push_back(*sample.prediction);
    if (pass_at_n(answers, result.gold, mode)) ++pass_correct;

    for (const FilterSample& sample : result.samples) {
      CriticInstance inst;
      inst.attempt_correct = matches_gold(sample.prediction, result.gold, mode);
      inst.has_flag = sample.flagged;
      with_malformed.push_back(inst);
      if (!sample.malformed) without_malformed.push_back(inst);
    }

    report.prompt_tokens += result.prompt_tokens;
    report.completion_tokens += result.completion_tokens;
    report.latency_s += result.latency_s;
    report.total_invocations += result.invocations;

    int level = result.level.value_or(0);
    LevelStats& stats = report.levels[level];
    ++stats.filter_count;
    if (maj_ok) stats.maj1 += 1.0;
    if (critic_ok) stats.critic_maj1 += 1.0;
  }
  if (!filters.empty()) {
    report.maj1 = static_cast<double>(maj_correct) / filters.size();
    report.critic_maj1 = static_cast<double>(critic_maj_correct) / filters.size();
    report.pass1 = static_cast<double>(pass_correct) / filters.size();
  }
  report.critic_malformed_as_flagged = critic_metrics(with_malformed);
  report.critic_malformed_excluded = critic_metrics(without_malformed);

  // The per-level sums above are counts; turn them into rates.
  for (auto& [level, stats] : report.levels) {
    if (stats.refine_count > 0) {
      stats.top1 /= stats.refine_count;
      stats.refine_final /= stats.refine_count;
    }
    if (stats.filter_count > 0) {
      stats.maj1 /= stats.filter_count;
      stats.critic_maj1 /= stats.filter_count;
    }
  }
  return report;
}

namespace {

json metric_to_json(const MetricValue& v) {
  json j;
  j["value"] = v.value;
  j["degenerate"] = v.degenerate;
  return j;
}

json critic_to_json(const CriticMetrics& m) {
  json j;
  j["tp"] = m.counts.tp;
  j["fp"] = m.counts.fp;
  j["fn"] = m.counts.fn;
  j["tn"] = m.counts.tn;
  j["precision"] = metric_to_json(m.precision);
  j["recall"] = metric_to_json(m.recall);
  j["f1"] = metric_to_json(m.f1);
  j["accuracy"] = metric_to_json(m.accuracy);
  return j;
}

}  // namespace

json report_to_json(const EvalReport& report) {
  json j;
  j["refine"]["cases"] = report.refine_cases;
  j["refine"]["top1"] = report.top1;
  j["refine"]["final_accuracy"] = report.refine_final;
  j["refine"]["validated_rate"] = report.validated_rate;
  j["refine"]["rounds"] = json::array();
  for (const RefineRoundStats& stats : report.rounds) {
    json r;
    r["round"] = stats.round;
    r["accuracy"] = stats.acc_at_round;
    r["true_to_true"] = metric_to_json(stats.true_to_true);
    r["false_to_true"] = metric_to_json(stats.false_to_true);
    r["flagged_traces"] = stats.flagged_traces;
    j["refine"]["rounds"].push_back(std::move(r));
  }
  j["refine"]["invocations"] = {{"cases", report.invocations.cases},
                                {"rounds", report.invocations.rounds},
                                {"total", report.invocations.invocations}};

  j["filter"]["cases"] = report.filter_cases;
  j["filter"]["maj1"] = report.maj1;
  j["filter"]["critic_maj1"] = report.critic_maj1;
  j["filter"]["pass1"] = report.pass1;
  j["filter"]["critic_malformed_as_flagged"] = critic_to_json(report.critic_malformed_as_flagged);
  j["filter"]["critic_malformed_excluded"] = critic_to_json(report.critic_malformed_excluded);

  j["levels"] = json::object();
  for (const auto& [level, stats] : report.levels) {
    json l;
    l["refine_count"] = stats.refine_count;
    l["top1"] = stats.top1;
    l["refine_final"] = stats.refine_final;
    l["filter_count"] = stats.filter_count;
    l["maj1"] = stats.maj1;
    l["critic_maj1"] = stats.critic_maj1;
    j["levels"][std::to_string(level)] = std::move(l);
  }

  j["cost"]["prompt_tokens"] = report.prompt_tokens;
  j["cost"]["completion_tokens"] = report.completion_tokens;
  j["cost"]["latency_s"] = report.latency_s;
  j["cost"]["invocations"] = report.total_invocations;
  return j;
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "metric,value\n";
  auto row = [&out](const std::string& name, double value) {
    out += name + "," + std::to_string(value) + "\n";
  };
  row("top1", report.top1);
  row("refine_final", report.refine_final);
  row("validated_rate", report.validated_rate);
  row("maj1", report.maj1);
  row("critic_maj1", report.critic_maj1);
  row("pass1", report.pass1);
  row("critic_precision", report.critic_malformed_as_flagged.precision.value);
  row("critic_recall", report.critic_malformed_as_flagged.recall.value);
  row("critic_f1", report.critic_malformed_as_flagged.f1.value);
  row("critic_accuracy", report.critic_malformed_as_flagged.accuracy.value);

  out += "\nround,accuracy,true_to_true,false_to_true\n";
  for (const RefineRoundStats& stats : report.rounds)
    out += std::to_string(stats.round) + "," + std::to_string(stats.acc_at_round) + "," +
           std::to_string(stats.true_to_true.value) + "," +
           std::to_string(stats.false_to_true.value) + "\n";

  out += "\nlevel,refine_count,top1,refine_final,filter_count,maj1,critic_maj1\n";
  for (const auto& [level, stats] : report.levels)
    out += std::to_string(level) + "," + std::to_string(stats.refine_count) + "," +
           std::to_string(stats.top1) + "," + std::to_string(stats.refine_final) + "," +
           std::to_string(stats.filter_count) + "," + std::to_string(stats.maj1) + "," +
           std::to_string(stats.critic_maj1) + "\n";
  return out;
}

}  // namespace criticloop
