#include <string>
#include <vector>

#include "doctest.h"

#include "criticloop/metrics.hpp"
#include "criticloop/transcript.hpp"

using namespace criticloop;

namespace {

std::vector<CriticInstance> instances_of(int tp, int fp, int fn, int tn) {
  std::vector<CriticInstance> v;
  for (int i = 0; i < tp; ++i) v.push_back({false, true});
  for (int i = 0; i < fp; ++i) v.push_back({true, true});
  for (int i = 0; i < fn; ++i) v.push_back({false, false});
  for (int i = 0; i < tn; ++i) v.push_back({true, false});
  return v;
}

Attempt attempt_with(const std::string& answer) {
  return parse_attempt("Step 1: Line up the units.\n\nStep 2: The total is \\boxed{" + answer +
                       "}.");
}

// A trace whose initial attempt predicts `initial`, with one correction round
// per entry of `after`; the ledger is kept consistent with the round count.
RefineTrace make_trace(const std::string& id, const std::string& initial, bool flagged,
                       const std::vector<std::string>& after) {
  RefineTrace trace;
  trace.question_id = id;
  trace.gold = "13";
  trace.initial = attempt_with(initial);
  trace.initial_flagged = flagged;
  for (const std::string& answer : after) {
    RefineRound round;
    round.prediction_after = answer;
    trace.rounds.push_back(std::move(round));
  }
  trace.final_attempt = attempt_with(after.empty() ? initial : after.back());
  trace.validated = !flagged || !after.empty();
  trace.invocations = 2 + 2 * static_cast<int>(trace.rounds.size());
  return trace;
}

std::vector<RefineTrace> fixture_traces() {
  return {
      make_trace("t1", "13", true, {"13"}),   // right, flagged anyway, survives
      make_trace("t2", "12", true, {"13"}),   // wrong, repaired
      make_trace("t3", "12", true, {"11"}),   // wrong, repair missed
      make_trace("t4", "13", false, {}),      // right, passed immediately
  };
}

FilterSample sample_with(const std::string& answer, bool flagged, bool malformed = false) {
  FilterSample sample;
  sample.attempt = attempt_with(answer);
  sample.prediction = answer;
  sample.flagged = flagged;
  sample.malformed = malformed;
  sample.kept = !flagged;
  return sample;
}

Question level_free_question(const std::string& reference) {
  Question q;
  q.id = "qd";
  q.problem = "p";
  q.gold = "1";
  q.reference_solution = reference;
  return q;
}

}  // namespace

TEST_CASE("confusion counts and the derived rates on a hand case") {
  CriticMetrics m = critic_metrics(instances_of(2, 1, 1, 2));
  CHECK(m.counts.tp == 2);
  CHECK(m.counts.fp == 1);
  CHECK(m.counts.fn == 1);
  CHECK(m.counts.tn == 2);
  CHECK(m.precision.value == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall.value == doctest::Approx(2.0 / 3.0));
  CHECK(m.f1.value == doctest::Approx(2.0 / 3.0));
  CHECK(m.accuracy.value == doctest::Approx(4.0 / 6.0));
  CHECK_FALSE(m.precision.degenerate);
  CHECK_FALSE(m.f1.degenerate);
}

TEST_CASE("a flawless critic scores ones across the board") {
  CriticMetrics m = critic_metrics(instances_of(5, 0, 0, 7));
  CHECK(m.precision.value == 1.0);
  CHECK(m.recall.value == 1.0);
  CHECK(m.f1.value == 1.0);
  CHECK(m.accuracy.value == 1.0);
}

TEST_CASE("zero-denominator rates are zero and say so") {
  // All attempts correct, none flagged: no positives anywhere.
  CriticMetrics m = critic_metrics(instances_of(0, 0, 0, 4));
  CHECK(m.precision.degenerate);
  CHECK(m.recall.degenerate);
  CHECK(m.f1.degenerate);
  CHECK(m.precision.value == 0.0);
  CHECK(m.accuracy.value == 1.0);
  CHECK_FALSE(m.accuracy.degenerate);

  CriticMetrics empty = critic_metrics({});
  CHECK(empty.accuracy.degenerate);
}

TEST_CASE("the answer at a round saturates at the trace's end") {
  RefineTrace trace = make_trace("t", "10", true, {"11", "12"});
  CHECK(*answer_at_round(trace, 0) == "10");
  CHECK(*answer_at_round(trace, 1) == "11");
  CHECK(*answer_at_round(trace, 2) == "12");
  CHECK(*answer_at_round(trace, 9) == "12");
  CHECK(*answer_at_round(trace, -3) == "10");

  RefineTrace bare;
  bare.gold = "1";
  CHECK_FALSE(answer_at_round(bare, 0).has_value());
}

TEST_CASE("per-round accuracy and the flagged-trace transition rates") {
  auto traces = fixture_traces();

  RefineRoundStats r0 = refine_accuracy(traces, 0, EqualityMode::Numeric);
  CHECK(r0.traces == 4);
  CHECK(r0.flagged_traces == 3);
  CHECK(r0.acc_at_round == doctest::Approx(0.5));
  CHECK(r0.true_to_true.value == doctest::Approx(1.0));
  CHECK(r0.false_to_true.value == doctest::Approx(0.0));

  RefineRoundStats r1 = refine_accuracy(traces, 1, EqualityMode::Numeric);
  CHECK(r1.acc_at_round == doctest::Approx(0.75));
  CHECK(r1.true_to_true.value == doctest::Approx(1.0));
  CHECK(r1.false_to_true.value == doctest::Approx(0.5));

  // Past every trace's last round nothing moves any more.
  RefineRoundStats r5 = refine_accuracy(traces, 5, EqualityMode::Numeric);
  CHECK(r5.acc_at_round == r1.acc_at_round);
  CHECK(r5.false_to_true.value == r1.false_to_true.value);

  RefineRoundStats none = refine_accuracy({}, 0, EqualityMode::Numeric);
  CHECK(none.acc_at_round == 0.0);
  CHECK(none.true_to_true.degenerate);
}

TEST_CASE("an explicit level field wins over any counting") {
  Question q = level_free_question("a <<1+1=2>>2 b <<2+2=4>>4");
  q.level = 4;
  DifficultyInfo info = difficulty_level(q);
  CHECK(info.level == 4);
  CHECK(info.from_level_field);
  CHECK(info.annotation_spans == 2);
}

TEST_CASE("difficulty counts calculator spans, clamped into one through five") {
  CHECK(difficulty_level(level_free_question("<<1=1>> <<2=2>> <<3=3>>")).level == 3);
  std::string nine;
  for (int i = 0; i < 9; ++i) nine += "<<" + std::to_string(i) + "=x>> ";
  CHECK(difficulty_level(level_free_question(nine)).level == 5);
  CHECK(difficulty_level(level_free_question("just prose, no math at all")).level == 1);
}

TEST_CASE("without spans the equation lines carry the count") {
  DifficultyInfo info =
      difficulty_level(level_free_question("First 3 + 4 = 7 pears.\nThen 7 * 2 = 14.\nDone."));
  CHECK(info.annotation_spans == 0);
  CHECK(info.equation_lines == 2);
  CHECK(info.level == 2);
}

TEST_CASE("difficulty without level or reference is an error, not a guess") {
  Question q;
  q.id = "qx";
  q.problem = "p";
  q.gold = "1";
  try {
    difficulty_level(q);
    FAIL("expected a metrics error");
  } catch (const MetricsError& e) {
    CHECK(e.code() == MetricsErrc::MissingReference);
  }
}

TEST_CASE("invocation accounting closes against every trace's own ledger") {
  std::vector<RefineTrace> flat;
  for (int i = 0; i < 10; ++i) flat.push_back(make_trace("t" + std::to_string(i), "13", false, {}));
  InvocationReport report = invocation_report(flat);
  CHECK(report.cases == 10);
  CHECK(report.rounds == 0);
  CHECK(report.invocations == 20);

  std::vector<RefineTrace> mixed{make_trace("a", "12", true, {}),
                                 make_trace("b", "12", true, {"12", "13"}),
                                 make_trace("c", "12", true, {"1", "2", "3", "4", "13"})};
  InvocationReport mixed_report = invocation_report(mixed);
  CHECK(mixed_report.cases == 3);
  CHECK(mixed_report.rounds == 7);
  CHECK(mixed_report.invocations == 20);

  mixed[1].invocations += 1;  // a trace that lies about its calls
  try {
    invocation_report(mixed);
    FAIL("expected a ledger mismatch");
  } catch (const MetricsError& e) {
    CHECK(e.code() == MetricsErrc::LedgerMismatch);
  }
}

TEST_CASE("the full report aggregates both strategies and splits by level") {
  auto traces = fixture_traces();

  FilterResult f1;
  f1.question_id = "f1";
  f1.gold = "13";
  f1.level = 2;
  f1.samples = {sample_with("13", false), sample_with("13", false), sample_with("12", true),
                sample_with("99", true, /*malformed=*/true)};
  f1.voted = "13";
  f1.plain_voted = "13";
  f1.invocations = 9;

  // Two agreeing wrong samples beat the lone right one until the critic
  // removes them.
  FilterResult f3;
  f3.question_id = "f3";
  f3.gold = "13";
  f3.samples = {sample_with("12", true), sample_with("12", true), sample_with("13", false)};
  f3.voted = "13";
  f3.plain_voted = "12";
  f3.invocations = 6;

  EvalReport report = evaluate(traces, {f1, f3}, EqualityMode::Numeric);

  CHECK(report.refine_cases == 4);
  CHECK(report.top1 == doctest::Approx(0.5));
  CHECK(report.refine_final == doctest::Approx(0.75));
  CHECK(report.validated_rate == doctest::Approx(1.0));
  REQUIRE(report.rounds.size() == 2);
  CHECK(report.rounds[1].acc_at_round == doctest::Approx(0.75));
  CHECK(report.invocations.cases == 4);
  CHECK(report.invocations.rounds == 3);
  CHECK(report.invocations.invocations == 14);

  CHECK(report.filter_cases == 2);
  CHECK(report.maj1 == doctest::Approx(0.5));
  CHECK(report.critic_maj1 == doctest::Approx(1.0));
  CHECK(report.pass1 == doctest::Approx(1.0));

  // Counting the malformed critique as a flag adds one true positive.
  CHECK(report.critic_malformed_as_flagged.counts.tp == 4);
  CHECK(report.critic_malformed_excluded.counts.tp == 3);
  CHECK(report.critic_malformed_as_flagged.counts.fp == 0);
  CHECK(report.critic_malformed_as_flagged.counts.tn == 3);
  CHECK(report.critic_malformed_as_flagged.precision.value == 1.0);
  CHECK(report.critic_malformed_as_flagged.recall.value == 1.0);

  // Traces with no level land in bucket 0; f1 carried level 2.
  REQUIRE(report.levels.count(0) == 1);
  REQUIRE(report.levels.count(2) == 1);
  CHECK(report.levels.at(0).refine_count == 4);
  CHECK(report.levels.at(0).filter_count == 1);
  CHECK(report.levels.at(0).maj1 == doctest::Approx(0.0));
  CHECK(report.levels.at(0).critic_maj1 == doctest::Approx(1.0));
  CHECK(report.levels.at(2).filter_count == 1);
  CHECK(report.levels.at(2).maj1 == doctest::Approx(1.0));

  CHECK(report.total_invocations == 14 + 9 + 6);

  auto j = report_to_json(report);
  CHECK(j.contains("refine"));
  CHECK(j.contains("filter"));
  CHECK(j.contains("levels"));
  CHECK(j.contains("cost"));
  CHECK(j["refine"]["rounds"].size() == 2);
  CHECK(j["levels"].contains("2"));
  CHECK(j["filter"]["critic_malformed_as_flagged"]["tp"] == 4);

  std::string csv = report_to_csv(report);
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("\ntop1,") != std::string::npos);
  CHECK(csv.find("critic_maj1,") != std::string::npos);
  CHECK(csv.find("\nlevel,refine_count,") != std::string::npos);
}

TEST_CASE("an empty evaluation still produces a well-formed report") {
  EvalReport report = evaluate({}, {}, EqualityMode::Numeric);
  CHECK(report.refine_cases == 0);
  CHECK(report.filter_cases == 0);
  CHECK(report.rounds.empty());
  CHECK(report.critic_malformed_as_flagged.accuracy.degenerate);
  auto j = report_to_json(report);
  CHECK(j["refine"]["cases"] == 0);
  CHECK(j["cost"]["invocations"] == 0);
}
