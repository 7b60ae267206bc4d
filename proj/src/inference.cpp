#include "criticloop/inference.hpp"

#include <algorithm>

#include "criticloop/text_util.hpp"

namespace criticloop {

namespace {

using json = nlohmann::json;

// A solve completion with no recognizable step structure still has to flow
// through critique and refinement, so it becomes a one-step attempt.
Attempt attempt_or_salvage(const std::string& question_id, const std::string& completion,
                           std::vector<std::string>& notes) {
  try {
    Attempt attempt = parse_attempt(completion);
    attempt.question_id = question_id;
    return attempt;
  } catch (const ParseError&) {
    notes.push_back("solution had no step markers; treated as a single step");
    Attempt attempt;
    attempt.question_id = question_id;
    attempt.steps.push_back(std::string(trim(completion)));
    attempt.prediction = extract_boxed(completion);
    attempt.raw = completion;
    return attempt;
  }
}

// A critique that fails to parse counts as flagging the last step: the raw
// completion becomes the verdict block, so the refinement prompt still gets
// criticism text and the round ledger stays intact.
Critique judge_critique(const std::string& completion, std::size_t n_steps,
                        std::vector<std::string>& notes) {
  try {
    return parse_critique(completion, n_steps);
  } catch (const ParseError& e) {
    notes.push_back(std::string("critique failed to parse (") + e.what() +
                    "); treated as flagging the last step");
    Critique critique;
    critique.raw = completion;
    StepVerdict verdict;
    verdict.index = n_steps == 0 ? 1 : n_steps;
    verdict.analysis = std::string(trim(completion));
    verdict.label = -1;
    verdict.block_begin = 0;
    verdict.block_end = completion.size();
    critique.first_error = verdict.index;
    critique.verdicts.push_back(std::move(verdict));
    return critique;
  }
}

json attempt_to_json(const Attempt& attempt) {
  json j;
  j["steps"] = attempt.steps;
  if (attempt.prediction) j["prediction"] = attempt.prediction->value;
  return j;
}

Attempt attempt_from_json(const json& j, const std::string& question_id) {
  Attempt attempt;
  attempt.question_id = question_id;
  attempt.steps = j.at("steps").get<std::vector<std::string>>();
  if (j.contains("prediction")) attempt.prediction = boxed_value(j["prediction"].get<std::string>());
  attempt.raw = render_attempt(attempt.steps);
  return attempt;
}

json correction_to_json(const Correction& corr) {
  json j;
  j["start_index"] = corr.start_index;
  j["steps"] = corr.steps;
  if (corr.prediction) j["prediction"] = corr.prediction->value;
  return j;
}

Correction correction_from_json(const json& j) {
  Correction corr;
  corr.start_index = j.at("start_index").get<std::size_t>();
  corr.steps = j.at("steps").get<std::vector<std::string>>();
  if (j.contains("prediction")) corr.prediction = boxed_value(j["prediction"].get<std::string>());
  corr.raw = render_attempt(corr.steps);
  return corr;
}

}  // namespace

RefineTrace iterative_refine(const Question& question, Backend& solver, Backend& critic,
                             Backend& refiner, const TemplateSet& templates,
                             const RefineParams& params) {
  RefineTrace trace;
  trace.question_id = question.id;
  trace.gold = question.gold;
  trace.level = question.level;

  auto charge = [&trace](const Exchange& ex) {
    ++trace.invocations;
    trace.prompt_tokens += ex.prompt_tokens;
    trace.completion_tokens += ex.completion_tokens;
    trace.latency_s += ex.latency_s;
  };

  Exchange solve_ex =
      solver.complete(render(templates.get("solve"), {{"problem", question.problem}}),
                      make_key(question.id, "solve"));
  charge(solve_ex);
  trace.initial = attempt_or_salvage(question.id, solve_ex.completion, trace.notes);

  auto critique_of = [&](const Attempt& attempt, std::vector<std::string>& notes) {
    std::string prompt =
        render(templates.get("critic"),
               {{"problem", question.problem}, {"attempt", render_attempt(attempt.steps)}});
    Exchange ex = critic.complete(prompt, make_key(question.id, "critic"));
    charge(ex);
    return judge_critique(ex.completion, attempt.steps.size(), notes);
  };

  Critique initial_critique = critique_of(trace.initial, trace.notes);
  trace.initial_critique = initial_critique.raw;
  trace.initial_flagged = initial_critique.flagged();

  Attempt current = trace.initial;
  Critique current_critique = initial_critique;
  int rounds_since_restart = 0;

  while (current_critique.flagged()) {
    if (rounds_since_restart == params.depth) {
      if (trace.restarts_used == params.restarts) break;
      // Depth exhausted: drop the refinements and pick the initial attempt
      // back up. Its critique is already known, so a restart costs nothing.
      ++trace.restarts_used;
      rounds_since_restart = 0;
      current = trace.initial;
      current_critique = initial_critique;
      continue;
    }

    RefineRound round;

    std::string refine_prompt =
        render(templates.get("refine"),
               {{"problem", question.problem},
                {"attempt", render_attempt(current.steps)},
                {"wrong_step_criticism", last_step_block(current_critique)}});
    Exchange refine_ex = refiner.complete(refine_prompt, make_key(question.id, "refine"));
    charge(refine_ex);

    Correction correction =
        correction_or_salvage(refine_ex.completion, current_critique.first_error);
    if (refine_ex.completion.find("<correction>") == std::string::npos)
      round.notes.push_back("refinement had no correction delimiters; whole completion taken as the correction");
    if (correction.start_index < 1) {
      round.notes.push_back("correction start raised to step 1");
      correction.start_index = 1;
    }
    if (correction.start_index > current.steps.size() + 1) {
      round.notes.push_back("correction start clamped from step " +
                            std::to_string(correction.start_index) + " to step " +
                            std::to_string(current.steps.size() + 1));
      correction.start_index = current.steps.size() + 1;
    }
    current = splice(current, correction);
    round.correction = std::move(correction);
    if (current.prediction) round.prediction_after = current.prediction->value;

    current_critique = critique_of(current, round.notes);
    round.critique = current_critique.raw;
    round.critique_flagged = current_critique.flagged();
    round.flagged_step = current_critique.first_error;

    ++rounds_since_restart;
    trace.rounds.push_back(std::move(round));
  }

  trace.final_attempt = current;
  trace.validated = !current_critique.flagged();
  return trace;
}

FilterResult critic_filter(const Question& question, const std::vector<Attempt>& attempts,
                           Backend& critic, const TemplateSet& templates,
                           const FilterParams& params) {
  FilterResult result;
  result.question_id = question.id;
  result.gold = question.gold;
  result.level = question.level;

  auto charge = [&result](const Exchange& ex) {
    ++result.invocations;
    result.prompt_tokens += ex.prompt_tokens;
    result.completion_tokens += ex.completion_tokens;
    result.latency_s += ex.latency_s;
  };

  for (const Attempt& attempt : attempts) {
    FilterSample sample;
    sample.attempt = attempt;
    if (attempt.prediction) sample.prediction = attempt.prediction->value;

    std::string prompt =
        render(templates.get("critic"),
               {{"problem", question.problem}, {"attempt", render_attempt(attempt.steps)}});

    bool parsed = false;
    Critique critique;
    for (int try_no = 0; try_no <= params.malformed_retry && !parsed; ++try_no) {
      Exchange ex = critic.complete(prompt, make_key(question.id, "critic"));
      charge(ex);
      sample.critique = ex.completion;
      try {
        critique = parse_critique(ex.completion, attempt.steps.size());
        parsed = true;
      } catch (const ParseError&) {
      }
    }

    if (parsed) {
      sample.flagged = critique.flagged();
    } else {
      // Never parsed: the critic could not certify the attempt, which is
      // exactly what a flag means for filtering purposes.
      sample.malformed = true;
      sample.flagged = true;
    }
    sample.kept = !sample.flagged;
    result.samples.push_back(std::move(sample));
  }

  std::vector<std::string> all_answers;
  std::vector<std::string> kept_answers;
  for (const FilterSample& sample : result.samples) {
    if (!sample.prediction) continue;
    all_answers.push_back(*sample.prediction);
    if (sample.kept) kept_answers.push_back(*sample.prediction);
  }

  result.plain_voted = majority_vote(all_answers, params.equality);
  if (kept_answers.empty()) {
    result.used_fallback = true;
    result.voted = result.plain_voted;
  } else {
    result.voted = majority_vote(kept_answers, params.equality);
  }
  return result;
}

FilterResult run_filter_question(const Question& question, Backend& generator, Backend& critic,
                                 const TemplateSet& templates, int n, const FilterParams& params) {
  std::string solve_prompt = render(templates.get("solve"), {{"problem", question.problem}});
  std::string solve_key = make_key(question.id, "solve");

  std::vector<Attempt> attempts;
  attempts.reserve(static_cast<std::size_t>(n));
  int solve_calls = 0;
  std::int64_t solve_prompt_tokens = 0;
  std::int64_t solve_completion_tokens = 0;
  double solve_latency = 0.0;
  std::vector<std::string> ignored_notes;

  for (int i = 0; i < n; ++i) {
    Exchange ex = generator.complete(solve_prompt, solve_key);
    ++solve_calls;
    solve_prompt_tokens += ex.prompt_tokens;
    solve_completion_tokens += ex.completion_tokens;
    solve_latency += ex.latency_s;
    attempts.push_back(attempt_or_salvage(question.id, ex.completion, ignored_notes));
  }

  FilterResult result = critic_filter(question, attempts, critic, templates, params);
  result.invocations += solve_calls;
  result.prompt_tokens += solve_prompt_tokens;
  result.completion_tokens += solve_completion_tokens;
  result.latency_s += solve_latency;
  return result;
}

std::optional<std::string> majority_vote(const std::vector<std::string>& answers,
                                         EqualityMode mode) {
  if (answers.empty()) return std::nullopt;

  // Representatives in first-occurrence order; each new answer joins the
  // first class it matches, so ties resolve to the earliest first occurrence
  // by construction (strict > below).
  std::vector<std::size_t> reps;
  std::vector<int> counts;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    bool matched = false;
    for (std::size_t c = 0; c < reps.size(); ++c) {
      if (answers_equal(answers[i], answers[reps[c]], mode)) {
        ++counts[c];
        matched = true;
        break;
      }
    }
    if (!matched) {
      reps.push_back(i);
      counts.push_back(1);
    }
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < reps.size(); ++c)
    if (counts[c] > counts[best]) best = c;
  return answers[reps[best]];
}

bool pass_at_n(const std::vector<std::string>& answers, const std::string& gold,
               EqualityMode mode) {
  return std::any_of(answers.begin(), answers.end(),
                     [&](const std::string& a) { return answers_equal(a, gold, mode); });
}

json trace_to_json(const RefineTrace& trace) {
  json j;
  j["question_id"] = trace.question_id;
  j["gold"] = trace.gold;
  if (trace.level) j["level"] = *trace.level;
  j["initial"] = attempt_to_json(trace.initial);
  j["initial_critique"] = trace.initial_critique;
  j["initial_flagged"] = trace.initial_flagged;
  j["rounds"] = json::array();
  for (const RefineRound& round : trace.rounds) {
    json r;
    r["correction"] = correction_to_json(round.correction);
    r["critique"] = round.critique;
    r["critique_flagged"] = round.critique_flagged;
    if (round.flagged_step) r["flagged_step"] = *round.flagged_step;
    if (round.prediction_after) r["prediction_after"] = *round.prediction_after;
    if (!round.notes.empty()) r["notes"] = round.notes;
    j["rounds"].push_back(std::move(r));
  }
  j["restarts_used"] = trace.restarts_used;
  j["final"] = attempt_to_json(trace.final_attempt);
  j["validated"] = trace.validated;
  j["invocations"] = trace.invocations;
  j["prompt_tokens"] = trace.prompt_tokens;
  j["completion_tokens"] = trace.completion_tokens;
  j["latency_s"] = trace.latency_s;
  if (!trace.notes.empty()) j["notes"] = trace.notes;
  return j;
}

RefineTrace trace_from_json(const json& j) {
  RefineTrace trace;
  trace.question_id = j.at("question_id").get<std::string>();
  trace.gold = j.at("gold").get<std::string>();
  if (j.contains("level")) trace.level = j["level"].get<int>();
  trace.initial = attempt_from_json(j.at("initial"), trace.question_id);
  trace.initial_critique = j.at("initial_critique").get<std::string>();
  trace.initial_flagged = j.at("initial_flagged").get<bool>();
  for (const json& r : j.at("rounds")) {
    RefineRound round;
    round.correction = correction_from_json(r.at("correction"));
    round.critique = r.at("critique").get<std::string>();
    round.critique_flagged = r.at("critique_flagged").get<bool>();
    if (r.contains("flagged_step")) round.flagged_step = r["flagged_step"].get<std::size_t>();
    if (r.contains("prediction_after"))
      round.prediction_after = r["prediction_after"].get<std::string>();
    if (r.contains("notes")) round.notes = r["notes"].get<std::vector<std::string>>();
    trace.rounds.push_back(std::move(round));
  }
  trace.restarts_used = j.at("restarts_used").get<int>();
  trace.final_attempt = attempt_from_json(j.at("final"), trace.question_id);
  trace.validated = j.at("validated").get<bool>();
  trace.invocations = j.at("invocations").get<int>();
  trace.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  trace.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  trace.latency_s = j.value("latency_s", 0.0);
  if (j.contains("notes")) trace.notes = j["notes"].get<std::vector<std::string>>();
  return trace;
}

json filter_to_json(const FilterResult& result) {
  json j;
  j["question_id"] = result.question_id;
  j["gold"] = result.gold;
  if (result.level) j["level"] = *result.level;
  j["samples"] = json::array();
  for (const FilterSample& sample : result.samples) {
    json s;
    s["steps"] = sample.attempt.steps;
    if (sample.prediction) s["prediction"] = *sample.prediction;
    s["critique"] = sample.critique;
    s["flagged"] = sample.flagged;
    s["malformed"] = sample.malformed;
    s["kept"] = sample.kept;
    j["samples"].push_back(std::move(s));
  }
  if (result.voted) j["voted"] = *result.voted;
  if (result.plain_voted) j["plain_voted"] = *result.plain_voted;
  j["used_fallback"] = result.used_fallback;
  j["invocations"] = result.invocations;
  j["prompt_tokens"] = result.prompt_tokens;
  j["completion_tokens"] = result.completion_tokens;
  j["latency_s"] = result.latency_s;
  return j;
}

FilterResult filter_from_json(const json& j) {
  FilterResult result;
  result.question_id = j.at("question_id").get<std::string>();
  result.gold = j.at("gold").get<std::string>();
  if (j.contains("level")) result.level = j["level"].get<int>();
  for (const json& s : j.at("samples")) {
    FilterSample sample;
    sample.attempt.question_id = result.question_id;
    sample.attempt.steps = s.at("steps").get<std::vector<std::string>>();
    if (s.contains("prediction")) {
      sample.prediction = s["prediction"].get<std::string>();
      sample.attempt.prediction = boxed_value(*sample.prediction);
    }
    sample.attempt.raw = render_attempt(sample.attempt.steps);
    sample.critique = s.at("critique").get<std::string>();
    sample.flagged = s.at("flagged").get<bool>();
    sample.malformed = s.at("malformed").get<bool>();
    sample.kept = s.at("kept").get<bool>();
    result.samples.push_back(std::move(sample));
  }
  if (j.contains("voted")) result.voted = j["voted"].get<std::string>();
  if (j.contains("plain_voted")) result.plain_voted = j["plain_voted"].get<std::string>();
  result.used_fallback = j.at("used_fallback").get<bool>();
  result.invocations = j.at("invocations").get<int>();
  result.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  result.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  result.latency_s = j.value("latency_s", 0.0);
  return result;
}

}  // namespace criticloop
