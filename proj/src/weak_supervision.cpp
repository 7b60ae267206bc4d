#include "criticloop/weak_supervision.hpp"

namespace criticloop {

SupervisionCase classify(bool attempt_correct, bool critique_flagged,
                         std::optional<bool> refine_correct) {
  bool refine_expected = !attempt_correct && critique_flagged;
  if (refine_expected != refine_correct.has_value())
    throw SupervisionError(refine_expected
                               ? "flagged wrong attempt needs a refinement outcome"
                               : "refinement outcome supplied for a case that has no refinement");

  if (!attempt_correct) {
    if (!critique_flagged) return {SupervisionVariant::WrongNoFlag, SupervisionAction::ResampleCritique};
    if (*refine_correct)
      return {SupervisionVariant::WrongFlagRightRefine, SupervisionAction::CollectCritiqueAndRefine};
    return {SupervisionVariant::WrongFlagWrongRefine, SupervisionAction::ResampleCritiqueAndRefine};
  }
  if (critique_flagged) return {SupervisionVariant::RightFlag, SupervisionAction::ResampleCritique};
  return {SupervisionVariant::RightNoFlag, SupervisionAction::CollectCritique};
}

bool prediction_matches(const std::optional<BoxedAnswer>& prediction, const std::string& gold,
                        EqualityMode mode) {
  return prediction && answers_equal(prediction->value, gold, mode);
}

std::vector<SupervisionRecord> collect(const Question& question, const Attempt& attempt,
                                       const Critique& critique, const std::string& critique_text,
                                       const std::optional<Correction>& correction,
                                       EqualityMode mode, const Provenance& provenance) {
  bool attempt_correct = prediction_matches(attempt.prediction, question.gold, mode);
  std::optional<bool> refine_correct;
  if (!attempt_correct && critique.flagged()) {
    if (!correction) throw SupervisionError("flagged wrong attempt has no correction to judge");
    refine_correct = prediction_matches(correction->prediction, question.gold, mode);
  }

  SupervisionCase sc = classify(attempt_correct, critique.flagged(), refine_correct);
  if (sc.action != SupervisionAction::CollectCritique &&
      sc.action != SupervisionAction::CollectCritiqueAndRefine)
    throw SupervisionError("case is not collectible");

  std::vector<SupervisionRecord> records;

  SupervisionRecord c;
  c.kind = RecordKind::C;
  c.question_id = question.id;
  c.attempt = attempt;
  c.attempt.question_id = question.id;
  c.critique = critique_text;
  c.provenance = provenance;
  records.push_back(std::move(c));

  if (sc.action == SupervisionAction::CollectCritiqueAndRefine) {
    SupervisionRecord r;
    r.kind = RecordKind::R;
    r.question_id = question.id;
    r.attempt = attempt;
    r.attempt.question_id = question.id;
    r.critique = last_step_block(critique);
    r.correction = correction;
    r.provenance = provenance;
    records.push_back(std::move(r));
  }
  return records;
}

SupervisionCase replay(const SupervisionRecord& record, const std::string& gold, EqualityMode mode,
                       std::optional<bool> paired_refine_correct) {
  bool attempt_correct = prediction_matches(record.attempt.prediction, gold, mode);

  bool flagged;
  if (record.kind == RecordKind::R) {
    flagged = true;  // R records exist only for flagged critiques
  } else {
    // A stored C critique is either fully positive or ends at its flag;
    // re-parse to recover which.
    std::size_t n = record.attempt.steps.size();
    flagged = parse_critique(record.critique, n).flagged();
  }

  std::optional<bool> refine_correct;
  if (!attempt_correct && flagged) {
    if (record.correction)
      refine_correct = prediction_matches(record.correction->prediction, gold, mode);
    else
      refine_correct = paired_refine_correct;
  }
  return classify(attempt_correct, flagged, refine_correct);
}

}  // namespace criticloop
