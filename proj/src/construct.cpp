#include "criticloop/construct.hpp"

#include <algorithm>
#include <fstream>

#include "criticloop/text_util.hpp"

namespace criticloop {

namespace {

using json = nlohmann::json;

// Issues one completion and charges it to the outcome's counters.
Exchange issue(Backend& backend, const std::string& prompt, const std::string& key,
               QuestionOutcome* outcome, int QuestionOutcome::*counter) {
  Exchange ex = backend.complete(prompt, key);
  if (outcome) {
    ++(outcome->*counter);
    outcome->prompt_tokens += ex.prompt_tokens;
    outcome->completion_tokens += ex.completion_tokens;
    outcome->latency_s += ex.latency_s;
  }
  return ex;
}

std::optional<Attempt> attempt_from_completion(const std::string& question_id,
                                               const std::string& completion) {
  try {
    Attempt attempt = parse_attempt(completion);
    attempt.question_id = question_id;
    return attempt;
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

bool contains_ci(const std::string& haystack, std::string_view needle) {
  return find_ci(haystack, needle) != std::string::npos;
}

// Storage hygiene for critiques produced under a hint template: the cleaned
// text must not leak the hint vocabulary into training data.
bool leaks_hints(const std::string& text) {
  return contains_ci(text, "reference solution") || contains_ci(text, "hint");
}

std::string collect_prompt(const Question& question, const std::string& attempt_text,
                           bool attempt_correct, bool hinted, const TemplateSet& templates) {
  if (!hinted)
    return render(templates.get("gsm8k_collect"),
                  {{"problem", question.problem}, {"attempt", attempt_text}});
  if (attempt_correct)
    return render(templates.get("math_collect_correct"),
                  {{"problem", question.problem}, {"attempt", attempt_text}});
  if (!question.reference_solution)
    throw SupervisionError(question.id + ": hinted collection of a wrong attempt needs a reference solution");
  return render(templates.get("math_collect_incorrect"),
                {{"problem", question.problem},
                 {"reference_solution", *question.reference_solution},
                 {"attempt", attempt_text}});
}

}  // namespace

BalancedSample sample_balanced(const Question& question, Backend& generator,
                               const TemplateSet& templates, int m, int cap, EqualityMode mode,
                               QuestionOutcome* outcome) {
  BalancedSample sample;
  std::string prompt = render(templates.get("solve"), {{"problem", question.problem}});
  std::string key = make_key(question.id, "solve");

  while ((static_cast<int>(sample.positives.size()) < m ||
          static_cast<int>(sample.negatives.size()) < m) &&
         sample.draws < cap) {
    Exchange ex = issue(generator, prompt, key, outcome, &QuestionOutcome::generator_calls);
    ++sample.draws;
    std::optional<Attempt> attempt = attempt_from_completion(question.id, ex.completion);
    if (!attempt) {
      if (outcome) ++outcome->malformed_attempts;
      continue;
    }
    auto& bucket = prediction_matches(attempt->prediction, question.gold, mode)
                       ? sample.positives
                       : sample.negatives;
    if (static_cast<int>(bucket.size()) < m) bucket.push_back(std::move(*attempt));
  }
  return sample;
}

std::optional<std::string> remove_hints(const std::string& critique_text, Backend& teacher,
                                        const TemplateSet& templates,
                                        const std::string& question_id, int semantic_retry,
                                        QuestionOutcome* outcome,
                                        const std::function<bool(const std::string&)>& accept) {
  std::string prompt =
      render(templates.get("hint_removal"), {{"critique_refinement", critique_text}});
  std::string key = make_key(question_id, "hint_removal");

  bool had_open = critique_text.find("<correction>") != std::string::npos;
  bool had_close = critique_text.find("</correction>") != std::string::npos;

  for (int try_no = 0; try_no < semantic_retry; ++try_no) {
    Exchange ex = issue(teacher, prompt, key, outcome, &QuestionOutcome::hint_removal_calls);
    const std::string& cleaned = ex.completion;
    if (had_open && cleaned.find("<correction>") == std::string::npos) continue;
    if (had_close && cleaned.find("</correction>") == std::string::npos) continue;
    if (accept && !accept(cleaned)) continue;
    return cleaned;
  }
  return std::nullopt;
}

CollectFlowResult collect_flow(const Question& question, const Attempt& attempt, Backend& model,
                               const std::string& model_role, const TemplateSet& templates,
                               const StageConfig& config, QuestionOutcome* outcome) {
  CollectFlowResult result;
  bool attempt_correct = prediction_matches(attempt.prediction, question.gold, config.equality);
  bool hinted = config.hint_mode == HintMode::ReferenceHint;
  std::string attempt_text = render_attempt(attempt.steps);
  std::string prompt = collect_prompt(question, attempt_text, attempt_correct, hinted, templates);
  std::string key = make_key(question.id, "collect");

  for (int try_no = 0; try_no < config.semantic_retry; ++try_no) {
    Exchange ex = issue(model, prompt, key, outcome, &QuestionOutcome::teacher_calls);

    Critique critique;
    try {
      critique = parse_critique(ex.completion, attempt.steps.size());
    } catch (const ParseError&) {
      continue;
    }

    // The collect prompt asks for the correction inline, so a flagged wrong
    // attempt without one is a semantic failure like any other.
    std::optional<Correction> correction;
    std::optional<bool> refine_correct;
    if (!attempt_correct && critique.flagged()) {
      correction = extract_correction(ex.completion, critique.first_error);
      if (!correction) continue;
      refine_correct = prediction_matches(correction->prediction, question.gold, config.equality);
    }

    SupervisionCase sup = classify(attempt_correct, critique.flagged(), refine_correct);
    if (sup.action != SupervisionAction::CollectCritique &&
        sup.action != SupervisionAction::CollectCritiqueAndRefine)
      continue;

    std::string stored_text = ex.completion;
    Critique stored_critique = critique;
    std::optional<Correction> stored_correction = correction;

    if (hinted) {
      // The cleaned text must re-parse to the same verdicts and, for flagged
      // wrong attempts, still carry a correction with the same outcome;
      // otherwise the cleaning changed the record's meaning.
      auto keeps_shape = [&](const std::string& cleaned) {
        if (leaks_hints(cleaned)) return false;
        try {
          Critique re = parse_critique(cleaned, attempt.steps.size());
          if (re.flagged() != critique.flagged()) return false;
          if (re.flagged() && re.first_error != critique.first_error) return false;
          if (!attempt_correct && re.flagged()) {
            auto rc = extract_correction(cleaned, re.first_error);
            if (!rc) return false;
            if (prediction_matches(rc->prediction, question.gold, config.equality) !=
                *refine_correct)
              return false;
          }
          return true;
        } catch (const ParseError&) {
          return false;
        }
      };
      auto cleaned = remove_hints(stored_text, model, templates, question.id,
                                  config.semantic_retry, outcome, keeps_shape);
      if (!cleaned) {
        result.dropped_by_hint_removal = true;
        return result;
      }
      stored_text = *cleaned;
      stored_critique = parse_critique(stored_text, attempt.steps.size());
      if (!attempt_correct && stored_critique.flagged())
        stored_correction = extract_correction(stored_text, stored_critique.first_error);
    }

    Provenance prov;
    prov.stage = config.stage;
    prov.role = model_role;
    prov.retries = try_no;
    prov.hinted = hinted;
    result.records = collect(question, attempt, stored_critique, stored_text, stored_correction,
                             config.equality, prov);
    result.collected = true;
    return result;
  }
  return result;
}

namespace {

struct StudentFlowResult {
  std::vector<SupervisionRecord> records;
  bool collected = false;
};

// Stage-2 student path: a critique call, then (only for a flagged wrong
// attempt) a refinement call, classified together; semantic failures restart
// the pair.
StudentFlowResult student_flow(const Question& question, const Attempt& attempt, Backend& student,
                               const std::string& student_role, const TemplateSet& templates,
                               const StageConfig& config, QuestionOutcome* outcome) {
  StudentFlowResult result;
  bool attempt_correct = prediction_matches(attempt.prediction, question.gold, config.equality);
  std::string attempt_text = render_attempt(attempt.steps);
  std::string critic_prompt = render(templates.get("critic"),
                                     {{"problem", question.problem}, {"attempt", attempt_text}});

  for (int try_no = 0; try_no < config.semantic_retry; ++try_no) {
    Exchange ex = issue(student, critic_prompt, make_key(question.id, "critic"), outcome,
                        &QuestionOutcome::student_calls);

    Critique critique;
    try {
      critique = parse_critique(ex.completion, attempt.steps.size());
    } catch (const ParseError&) {
      continue;
    }

    std::optional<Correction> correction;
    std::optional<bool> refine_correct;
    if (!attempt_correct && critique.flagged()) {
      std::string refine_prompt =
          render(templates.get("refine"), {{"problem", question.problem},
                                           {"attempt", attempt_text},
                                           {"wrong_step_criticism", last_step_block(critique)}});
      Exchange rex = issue(student, refine_prompt, make_key(question.id, "refine"), outcome,
                           &QuestionOutcome::student_calls);
      correction = correction_or_salvage(rex.completion, critique.first_error);
      refine_correct = prediction_matches(correction->prediction, question.gold, config.equality);
    }

    SupervisionCase sup = classify(attempt_correct, critique.flagged(), refine_correct);
    if (sup.action != SupervisionAction::CollectCritique &&
        sup.action != SupervisionAction::CollectCritiqueAndRefine)
      continue;

    Provenance prov;
    prov.stage = config.stage;
    prov.role = student_role;
    prov.retries = try_no;
    prov.hinted = false;
    result.records =
        collect(question, attempt, critique, ex.completion, correction, config.equality, prov);
    result.collected = true;
    return result;
  }
  return result;
}

void absorb(QuestionStageOutput& out, std::vector<SupervisionRecord>&& records) {
  for (auto& record : records) {
    if (record.kind == RecordKind::C)
      ++out.outcome.collected_c;
    else
      ++out.outcome.collected_r;
    out.records.push_back(std::move(record));
  }
}

StageResult merge_outputs(const std::vector<Question>& questions,
                          const std::function<QuestionStageOutput(const Question&)>& run_one) {
  // Process in id order so the flat record stream is sorted without a final
  // shuffle; within a question, emission order is already deterministic.
  std::vector<const Question*> sorted;
  sorted.reserve(questions.size());
  for (const Question& q : questions) sorted.push_back(&q);
  std::sort(sorted.begin(), sorted.end(),
            [](const Question* a, const Question* b) { return a->id < b->id; });

  StageResult result;
  for (const Question* q : sorted) {
    QuestionStageOutput out = run_one(*q);
    result.outcomes[q->id] = out.outcome;
    for (auto& record : out.records) result.records.push_back(std::move(record));
  }
  return result;
}

}  // namespace

QuestionStageOutput run_stage1_question(const Question& question, Backend& generator,
                                        Backend& teacher, const std::string& teacher_role,
                                        const TemplateSet& templates, const StageConfig& config) {
  QuestionStageOutput out;
  try {
    std::string solve_prompt = render(templates.get("solve"), {{"problem", question.problem}});
    std::string solve_key = make_key(question.id, "solve");

    for (int i = 0; i < config.solutions_per_question; ++i) {
      Exchange ex =
          issue(generator, solve_prompt, solve_key, &out.outcome, &QuestionOutcome::generator_calls);
      ++out.outcome.attempts;
      std::optional<Attempt> attempt = attempt_from_completion(question.id, ex.completion);
      if (!attempt) {
        ++out.outcome.malformed_attempts;
        continue;
      }
      CollectFlowResult flow =
          collect_flow(question, *attempt, teacher, teacher_role, templates, config, &out.outcome);
      if (flow.collected)
        absorb(out, std::move(flow.records));
      else if (flow.dropped_by_hint_removal)
        ++out.outcome.dropped_delimiter;
      else
        ++out.outcome.skipped;
    }
  } catch (const std::exception& e) {
    out.outcome.error = e.what();
  }
  return out;
}

QuestionStageOutput run_stage2_question(const Question& question, Backend& generator,
                                        Backend& student, const std::string& student_role,
                                        Backend* teacher, const std::string& teacher_role,
                                        const TemplateSet& templates, const StageConfig& config) {
  QuestionStageOutput out;
  try {
    BalancedSample sample = sample_balanced(question, generator, templates, config.balanced_m,
                                            config.sample_cap, config.equality, &out.outcome);

    std::vector<Attempt> attempts = std::move(sample.positives);
    attempts.insert(attempts.end(), std::make_move_iterator(sample.negatives.begin()),
                    std::make_move_iterator(sample.negatives.end()));
    out.outcome.attempts = static_cast<int>(attempts.size());

    for (const Attempt& attempt : attempts) {
      StudentFlowResult student_out =
          student_flow(question, attempt, student, student_role, templates, config, &out.outcome);
      if (student_out.collected) {
        absorb(out, std::move(student_out.records));
        continue;
      }
      if (teacher) {
        CollectFlowResult teacher_out = collect_flow(question, attempt, *teacher, teacher_role,
                                                     templates, config, &out.outcome);
        if (teacher_out.collected) {
          absorb(out, std::move(teacher_out.records));
          continue;
        }
        if (teacher_out.dropped_by_hint_removal) {
          ++out.outcome.dropped_delimiter;
          continue;
        }
      }
      ++out.outcome.skipped;
    }
  } catch (const std::exception& e) {
    out.outcome.error = e.what();
  }
  return out;
}

StageResult build_stage1(const std::vector<Question>& questions, Backend& generator,
                         Backend& teacher, const std::string& teacher_role,
                         const TemplateSet& templates, const StageConfig& config) {
  return merge_outputs(questions, [&](const Question& q) {
    return run_stage1_question(q, generator, teacher, teacher_role, templates, config);
  });
}

StageResult build_stage2(const std::vector<Question>& questions, Backend& generator,
                         Backend& student, const std::string& student_role, Backend* teacher,
                         const std::string& teacher_role, const TemplateSet& templates,
                         const StageConfig& config) {
  return merge_outputs(questions, [&](const Question& q) {
    return run_stage2_question(q, generator, student, student_role, teacher, teacher_role,
                               templates, config);
  });
}

namespace {

// Minimal critique text for imported labels: conclusion lines only, which
// parse_critique accepts with empty analyses. Labels stop at the first -1.
std::string canonical_critique_text(const std::vector<int>& labels) {
  std::string text;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) text += "\n";
    text += "Conclusion: Step " + std::to_string(i + 1) +
            (labels[i] < 0 ? " is incorrect." : " is correct.");
    if (labels[i] < 0) break;
  }
  return text;
}

}  // namespace

StageResult import_precritiqued(const std::vector<Question>& questions,
                                const std::string& records_path, const StageConfig& config) {
  std::map<std::string, const Question*> by_id;
  for (const Question& q : questions) by_id[q.id] = &q;

  std::ifstream in(records_path);
  if (!in) throw DatasetError(records_path + ": cannot open for import");

  StageResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::string where = records_path + ":" + std::to_string(line_no);

    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      result.outcomes["<" + where + ">"].error = std::string("bad JSON: ") + e.what();
      continue;
    }

    std::string qid = j.value("question_id", std::string{});
    QuestionOutcome& outcome = result.outcomes[qid.empty() ? "<" + where + ">" : qid];
    ++outcome.attempts;

    auto question_it = qid.empty() ? by_id.end() : by_id.find(qid);
    if (question_it == by_id.end()) {
      outcome.error = where + ": unknown question id";
      ++outcome.skipped;
      continue;
    }
    const Question& question = *question_it->second;

    try {
      Attempt attempt;
      attempt.question_id = qid;
      attempt.steps = j.at("steps").get<std::vector<std::string>>();
      if (j.contains("prediction") && !j["prediction"].is_null())
        attempt.prediction = boxed_value(j["prediction"].get<std::string>());
      attempt.raw = render_attempt(attempt.steps);

      std::vector<int> labels = j.at("labels").get<std::vector<int>>();
      std::string critique_text = canonical_critique_text(labels);
      Critique critique = parse_critique(critique_text, attempt.steps.size());

      std::optional<Correction> correction;
      if (j.contains("correction") && !j["correction"].is_null()) {
        const json& jc = j["correction"];
        Correction corr;
        corr.start_index = jc.at("start_index").get<std::size_t>();
        corr.steps = jc.at("steps").get<std::vector<std::string>>();
        if (jc.contains("prediction") && !jc["prediction"].is_null())
          corr.prediction = boxed_value(jc["prediction"].get<std::string>());
        corr.raw = render_attempt(corr.steps);
        correction = std::move(corr);
      }

      bool attempt_correct = prediction_matches(attempt.prediction, question.gold, config.equality);
      std::optional<bool> refine_correct;
      if (!attempt_correct && critique.flagged()) {
        if (!correction) {
          // Flagged wrong attempt with no correction supplied: nothing to
          // collect from this line.
          ++outcome.skipped;
          continue;
        }
        refine_correct = prediction_matches(correction->prediction, question.gold, config.equality);
      } else {
        correction.reset();  // ignore stray corrections on non-refine cases
      }

      SupervisionCase sup = classify(attempt_correct, critique.flagged(), refine_correct);
      if (sup.action != SupervisionAction::CollectCritique &&
          sup.action != SupervisionAction::CollectCritiqueAndRefine) {
        ++outcome.skipped;
        continue;
      }

      Provenance prov;
      prov.stage = config.stage;
      prov.role = "imported";
      prov.retries = 0;
      prov.hinted = false;
      auto records =
          collect(question, attempt, critique, critique_text, correction, config.equality, prov);
      for (auto& record : records) {
        if (record.kind == RecordKind::C)
          ++outcome.collected_c;
        else
          ++outcome.collected_r;
        result.records.push_back(std::move(record));
      }
    } catch (const std::exception& e) {
      outcome.error = where + ": " + e.what();
      ++outcome.skipped;
    }
  }

  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const SupervisionRecord& a, const SupervisionRecord& b) {
                     return a.question_id < b.question_id;
                   });
  return result;
}

json record_to_json(const SupervisionRecord& record) {
  json j;
  j["kind"] = record.kind == RecordKind::C ? "C" : "R";
  j["question_id"] = record.question_id;
  j["attempt"]["steps"] = record.attempt.steps;
  if (record.attempt.prediction)
    j["attempt"]["prediction"] = record.attempt.prediction->value;
  j["critique"] = record.critique;
  if (record.correction) {
    j["correction"]["start_index"] = record.correction->start_index;
    j["correction"]["steps"] = record.correction->steps;
    if (record.correction->prediction)
      j["correction"]["prediction"] = record.correction->prediction->value;
  }
  j["provenance"] = {{"stage", record.provenance.stage},
                     {"role", record.provenance.role},
                     {"retries", record.provenance.retries},
                     {"hinted", record.provenance.hinted}};
  return j;
}

SupervisionRecord record_from_json(const json& j) {
  SupervisionRecord record;
  record.kind = j.at("kind").get<std::string>() == "R" ? RecordKind::R : RecordKind::C;
  record.question_id = j.at("question_id").get<std::string>();
  record.attempt.question_id = record.question_id;
  record.attempt.steps = j.at("attempt").at("steps").get<std::vector<std::string>>();
  if (j.at("attempt").contains("prediction"))
    record.attempt.prediction = boxed_value(j["attempt"]["prediction"].get<std::string>());
  record.attempt.raw = render_attempt(record.attempt.steps);
  record.critique = j.at("critique").get<std::string>();
  if (j.contains("correction")) {
    Correction corr;
    corr.start_index = j["correction"].at("start_index").get<std::size_t>();
    corr.steps = j["correction"].at("steps").get<std::vector<std::string>>();
    if (j["correction"].contains("prediction"))
      corr.prediction = boxed_value(j["correction"]["prediction"].get<std::string>());
    corr.raw = render_attempt(corr.steps);
    record.correction = std::move(corr);
  }
  const json& prov = j.at("provenance");
  record.provenance.stage = prov.at("stage").get<int>();
  record.provenance.role = prov.at("role").get<std::string>();
  record.provenance.retries = prov.at("retries").get<int>();
  record.provenance.hinted = prov.at("hinted").get<bool>();
  return record;
}

std::string records_to_jsonl(const std::vector<SupervisionRecord>& records) {
  std::string out;
  for (const SupervisionRecord& record : records) {
    out += record_to_json(record).dump();
    out += "\n";
  }
  return out;
}

json outcome_to_json(const QuestionOutcome& outcome) {
  json j;
  j["attempts"] = outcome.attempts;
  j["collected_c"] = outcome.collected_c;
  j["collected_r"] = outcome.collected_r;
  j["skipped"] = outcome.skipped;
  j["dropped_delimiter"] = outcome.dropped_delimiter;
  j["malformed_attempts"] = outcome.malformed_attempts;
  j["generator_calls"] = outcome.generator_calls;
  j["student_calls"] = outcome.student_calls;
  j["teacher_calls"] = outcome.teacher_calls;
  j["hint_removal_calls"] = outcome.hint_removal_calls;
  j["prompt_tokens"] = outcome.prompt_tokens;
  j["completion_tokens"] = outcome.completion_tokens;
  j["latency_s"] = outcome.latency_s;
  if (!outcome.error.empty()) j["error"] = outcome.error;
  return j;
}

QuestionOutcome outcome_from_json(const json& j) {
  QuestionOutcome outcome;
  outcome.attempts = j.value("attempts", 0);
  outcome.collected_c = j.value("collected_c", 0);
  outcome.collected_r = j.value("collected_r", 0);
  outcome.skipped = j.value("skipped", 0);
  outcome.dropped_delimiter = j.value("dropped_delimiter", 0);
  outcome.malformed_attempts = j.value("malformed_attempts", 0);
  outcome.generator_calls = j.value("generator_calls", 0);
  outcome.student_calls = j.value("student_calls", 0);
  outcome.teacher_calls = j.value("teacher_calls", 0);
  outcome.hint_removal_calls = j.value("hint_removal_calls", 0);
  outcome.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  outcome.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  outcome.latency_s = j.value("latency_s", 0.0);
  outcome.error = j.value("error", std::string{});
  return outcome;
}

}  // namespace criticloop
