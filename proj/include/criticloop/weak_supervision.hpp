#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "criticloop/dataset.hpp"
#include "criticloop/transcript.hpp"

namespace criticloop {

// The weak-supervision decision table over three observable booleans:
// whether the attempt's final answer matches gold, whether the critique
// flagged a step, and (only when it flagged a wrong attempt) whether the
// refinement reached gold.
enum class SupervisionVariant {
  WrongNoFlag,          // wrong answer, critique saw nothing
  WrongFlagWrongRefine, // wrong answer, flagged, refinement still wrong
  WrongFlagRightRefine, // wrong answer, flagged, refinement recovered gold
  RightNoFlag,          // right answer, clean critique
  RightFlag,            // right answer, critique flagged anyway
};

enum class SupervisionAction {
  ResampleCritique,
  ResampleCritiqueAndRefine,
  CollectCritique,           // one C record
  CollectCritiqueAndRefine,  // a C record plus an R record
};

struct SupervisionCase {
  SupervisionVariant variant;
  SupervisionAction action;
};

class SupervisionError : public std::runtime_error {
 public:
  explicit SupervisionError(const std::string& what) : std::runtime_error(what) {}
};

// Maps the three observables to a case. refine_correct must be present
// exactly when (wrong attempt && flagged); anything else is an inconsistent
// input and throws.
SupervisionCase classify(bool attempt_correct, bool critique_flagged,
                         std::optional<bool> refine_correct);

// True when the prediction exists and equals gold under the mode. This one
// comparison decides attempt correctness and refinement success everywhere,
// so the pipelines and the replay check can never disagree on it.
bool prediction_matches(const std::optional<BoxedAnswer>& prediction, const std::string& gold,
                        EqualityMode mode);

enum class RecordKind { C, R };

struct Provenance {
  int stage = 0;         // 1 or 2
  std::string role;      // which model produced the critique
  int retries = 0;       // semantic tries consumed before this record (0-based)
  bool hinted = false;   // critique was produced under a hint template
};

// One training record. C records carry the full critique text; R records
// carry only the final verdict block plus the correction that repaired the
// attempt from the flagged step.
struct SupervisionRecord {
  RecordKind kind = RecordKind::C;
  std::string question_id;
  Attempt attempt;
  std::string critique;
  std::optional<Correction> correction;
  Provenance provenance;
};

// Builds the records for a collectible case: a C record always, plus an R
// record when the flagged critique's refinement recovered gold.
// critique_text is the stored form of the critique (it may differ from
// critique.raw after hint removal). Throws SupervisionError when the case is
// not collectible.
std::vector<SupervisionRecord> collect(const Question& question, const Attempt& attempt,
                                       const Critique& critique, const std::string& critique_text,
                                       const std::optional<Correction>& correction,
                                       EqualityMode mode, const Provenance& provenance);

// Re-derives the supervision case from a stored record's own fields. For a C
// record that flags a wrong attempt the refinement outcome lives in the
// paired R record, so the caller passes it in. Used by the replay-soundness
// checks: every emitted record must re-classify to a Collect action.
SupervisionCase replay(const SupervisionRecord& record, const std::string& gold, EqualityMode mode,
                       std::optional<bool> paired_refine_correct = std::nullopt);

}  // namespace criticloop
