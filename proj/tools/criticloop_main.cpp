#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "criticloop/dataset.hpp"
#include "criticloop/runner.hpp"

namespace {

const char* status_word(criticloop::RunStatus status) {
  switch (status) {
    case criticloop::RunStatus::Clean:
      return "clean";
    case criticloop::RunStatus::ConfigInvalid:
      return "invalid config";
    case criticloop::RunStatus::Partial:
      return "partial";
    case criticloop::RunStatus::Failed:
      return "failed";
  }
  return "failed";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"criticloop: step-wise critique, refinement, and filtering pipelines\n"
               "over chat-completion backends (live endpoints or deterministic mocks)"};
  app.require_subcommand(1);
  // Flags given on the command line win over values from the config file;
  // subcommand options live in sections named after the subcommand.
  app.set_config("--config", "", "read default option values from a TOML/INI file");

  criticloop::RunConfig config;
  std::string profiles_path;
  std::string equality = "numeric";
  std::string hint_mode = "none";
  int limit = 0;

  // Deliberately no required() or range checks here: the runner's validate()
  // owns every constraint so violations come back as one named message each
  // and a single exit code, instead of whatever the parser would improvise.
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", config.seed,
                    "base seed; every deterministic draw derives from it, the question id, and "
                    "the call index")
        ->capture_default_str();
    sub->add_option("--parallel", config.parallel, "worker threads over questions")
        ->capture_default_str();
    sub->add_flag("--resume", config.resume,
                  "skip questions the manifest already records and merge prior outputs");
    sub->add_option("--templates", config.template_dir,
                    "prompt template directory (default: $CRITICLOOP_TEMPLATES, then the "
                    "built-in set)");
    sub->add_option("--profiles", profiles_path, "JSON file of named backend profiles");
    sub->add_option("--equality", equality, "answer comparison: exact or numeric")
        ->check(CLI::IsMember({"exact", "numeric"}));
    sub->add_option("--limit", limit, "process only the first N questions (sorted by id)");
  };

  auto add_backends = [&](CLI::App* sub, bool with_refiner, bool with_teacher) {
    sub->add_option("--generator", config.generator,
                    "profile name or inline target that samples solution attempts");
    sub->add_option("--critic", config.critic,
                    "profile name or inline target that critiques attempts (default: the "
                    "generator)");
    if (with_refiner)
      sub->add_option("--refiner", config.refiner,
                      "profile name or inline target that rewrites flagged attempts (default: "
                      "the critic)");
    if (with_teacher)
      sub->add_option("--teacher", config.teacher,
                      "stage 2 fallback collector when the student's critique fails the checks");
  };

  auto* construct = app.add_subcommand("construct", "build weak-supervision training records");
  construct->add_option("--stage", config.stage.stage,
                        "1: teacher critiques sampled attempts; 2: balanced sampling, student "
                        "critiques with teacher fallback")
      ->capture_default_str();
  construct->add_option("--dataset", config.dataset_path, "questions JSONL");
  construct->add_option("--out", config.out_dir, "output directory");
  add_backends(construct, false, true);
  construct->add_option("--solutions-per-question", config.stage.solutions_per_question,
                        "stage 1 attempts drawn per question")
      ->capture_default_str();
  construct->add_option("--balanced-m", config.stage.balanced_m,
                        "stage 2 target per correctness bucket")
      ->capture_default_str();
  construct->add_option("--sample-cap", config.stage.sample_cap,
                        "stage 2 hard cap on draws while filling buckets")
      ->capture_default_str();
  construct->add_option("--semantic-retry", config.stage.semantic_retry,
                        "critique attempts per sampled solution before giving up on it")
      ->capture_default_str();
  construct->add_option("--hint-mode", hint_mode,
                        "none, or reference_hint to show the teacher the reference solution "
                        "(hints are scrubbed before storage)")
      ->check(CLI::IsMember({"none", "reference_hint"}));
  add_common(construct);

  auto* infer = app.add_subcommand("infer", "inference-time strategies");
  infer->require_subcommand(1);

  auto* refine = infer->add_subcommand(
      "refine", "solve once per question, then critique and refine until the critic accepts");
  refine->add_option("--dataset", config.dataset_path, "questions JSONL");
  refine->add_option("--out", config.out_dir, "output directory");
  add_backends(refine, true, false);
  refine->add_option("--depth", config.refine.depth,
                     "refinement rounds before falling back to the initial attempt")
      ->capture_default_str();
  refine->add_option("--restarts", config.refine.restarts, "fallbacks allowed before stopping")
      ->capture_default_str();
  add_common(refine);

  auto* filter = infer->add_subcommand(
      "filter", "sample N attempts per question and majority-vote over critic-approved ones");
  filter->add_option("--dataset", config.dataset_path, "questions JSONL");
  filter->add_option("--out", config.out_dir, "output directory");
  add_backends(filter, false, false);
  filter->add_option("--samples", config.filter_samples, "attempts drawn per question")
      ->capture_default_str();
  filter->add_option("--malformed-retry", config.filter.malformed_retry,
                     "extra critique calls when a critique does not parse")
      ->capture_default_str();
  add_common(filter);

  auto* eval = app.add_subcommand("eval", "score written traces and results into a report");
  eval->add_option("--traces", config.traces_dir,
                   "directory holding refine_traces.jsonl and/or filter_results.jsonl");
  eval->add_option("--report", config.report_path, "report path (default: <traces>/report.json)");
  eval->add_flag("--csv", config.write_csv, "also write the report as CSV next to the JSON");
  add_common(eval);

  CLI11_PARSE(app, argc, argv);

  if (construct->parsed()) {
    config.command = criticloop::Command::Construct;
  } else if (infer->parsed()) {
    config.command = refine->parsed() ? criticloop::Command::InferRefine
                                      : criticloop::Command::InferFilter;
  } else {
    config.command = criticloop::Command::Eval;
  }

  if (limit > 0) config.limit = limit;
  config.equality = equality == "exact" ? criticloop::EqualityMode::Exact
                                        : criticloop::EqualityMode::Numeric;
  config.stage.equality = config.equality;
  config.filter.equality = config.equality;
  config.stage.hint_mode = hint_mode == "reference_hint" ? criticloop::HintMode::ReferenceHint
                                                         : criticloop::HintMode::None;

  if (!profiles_path.empty()) {
    try {
      config.profiles = criticloop::load_profiles(profiles_path);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s\n", e.what());
      return criticloop::exit_code(criticloop::RunStatus::ConfigInvalid);
    }
  }

  criticloop::RunSummary summary;
  try {
    summary = criticloop::run(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return criticloop::exit_code(criticloop::RunStatus::Failed);
  }

  for (const auto& message : summary.messages) {
    if (summary.status == criticloop::RunStatus::Clean)
      std::printf("%s\n", message.c_str());
    else
      std::fprintf(stderr, "%s\n", message.c_str());
  }
  std::printf("%s: %d done, %d failed, %d resumed\n", status_word(summary.status),
              summary.questions_done, summary.questions_failed, summary.questions_resumed);
  return criticloop::exit_code(summary.status);
}
