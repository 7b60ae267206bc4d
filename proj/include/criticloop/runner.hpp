#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "criticloop/answer_extract.hpp"
#include "criticloop/backend.hpp"
#include "criticloop/construct.hpp"
#include "criticloop/inference.hpp"

namespace criticloop {

enum class Command {
  Construct,     // build weak-supervision records (stage 1 or 2)
  InferRefine,   // solve + critique + iterative refinement per question
  InferFilter,   // sample N solutions, critique each, vote over survivors
  Eval,          // score previously written traces/results into a report
};

// Everything a run needs, assembled by the CLI (or a test) before any work
// starts. Backend profiles are looked up by name in `profiles`; a name that
// is not registered there is treated as an inline target string (so
// `--generator synthetic` works without a profile file).
struct RunConfig {
  Command command = Command::Construct;

  std::string dataset_path;
  std::string out_dir;

  // Eval inputs/outputs. traces_dir defaults to out_dir when empty so
  // `eval --out DIR` scores the directory a run just wrote.
  std::string traces_dir;
  std::string report_path;  // empty: <traces_dir>/report.json
  bool write_csv = false;

  std::map<std::string, BackendProfile> profiles;
  std::string generator;  // profile name or inline target
  std::string critic;     // defaults to generator when empty
  std::string refiner;    // defaults to critic when empty
  std::string teacher;    // stage 2 fallback; empty disables it

  StageConfig stage;
  RefineParams refine;
  int filter_samples = 96;
  FilterParams filter;
  EqualityMode equality = EqualityMode::Numeric;

  std::string template_dir;  // empty: default_template_dir()
  std::uint64_t seed = 0;
  int parallel = 4;
  bool resume = false;
  std::optional<int> limit;  // process only the first N questions (by id)
};

// Checks the config without touching the filesystem beyond an existence test
// on the dataset. Returns one message per violation, each naming the field
// and the constraint it broke; empty means the run may start. Live profiles
// are checked for their environment variables here so a misconfigured run
// fails before any question is attempted.
std::vector<std::string> validate(const RunConfig& config);

enum class RunStatus {
  Clean,          // every question produced its artifact
  ConfigInvalid,  // validate() failed or the dataset violated the config
  Partial,        // some questions failed; their errors are in the manifest
  Failed,         // nothing usable was produced
};

struct RunSummary {
  RunStatus status = RunStatus::Failed;
  int questions_done = 0;
  int questions_failed = 0;
  int questions_resumed = 0;  // skipped because the manifest already has them
  std::vector<std::string> messages;
};

// Executes the configured command. Outputs land in out_dir:
//   construct     d1.jsonl / d2.jsonl   manifest.construct-stage<N>.json
//   infer refine  refine_traces.jsonl   manifest.infer-refine.json
//   infer filter  filter_results.jsonl  manifest.infer-filter.json
//   eval          report.json (+ report.csv)
// Manifests are keyed by question id and carry per-question outcomes, so a
// refine run and a filter run can share one directory. With resume=true,
// questions already recorded as done are skipped and their previous artifacts
// are merged into the rewrite; the merged files come out sorted by question
// id, byte-identical to an uninterrupted run against deterministic backends.
RunSummary run(const RunConfig& config);

// Maps a summary to the process exit code the CLI promises:
// 0 clean, 2 invalid config, 3 partial, 4 failed.
int exit_code(RunStatus status);

// Loads a profile file: a JSON object mapping profile name to
// {role, target, temperature?, top_p?, max_tokens?, retry_budget?,
//  max_in_flight?}. Throws DatasetError on malformed input.
std::map<std::string, BackendProfile> load_profiles(const std::string& path);

}  // namespace criticloop
