#include "criticloop/runner.hpp"

#include <atomic>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "criticloop/dataset.hpp"
#include "criticloop/metrics.hpp"
#include "criticloop/prompts.hpp"

namespace criticloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string command_tag(const RunConfig& config) {
  switch (config.command) {
    case Command::Construct:
      return "construct-stage" + std::to_string(config.stage.stage);
    case Command::InferRefine:
      return "infer-refine";
    case Command::InferFilter:
      return "infer-filter";
    case Command::Eval:
      return "eval";
  }
  return "unknown";
}

// Fills the defaults the flags allow to be omitted, so validate() and run()
// reason about the same effective config.
RunConfig normalized(RunConfig config) {
  if (config.critic.empty()) config.critic = config.generator;
  if (config.refiner.empty()) config.refiner = config.critic;
  if (config.traces_dir.empty()) config.traces_dir = config.out_dir;
  if (config.report_path.empty() && !config.traces_dir.empty())
    config.report_path = (fs::path(config.traces_dir) / "report.json").string();
  return config;
}

// A flag value is either a registered profile name or an inline target.
// Inline targets get the role as their name so each role draws from its own
// deterministic stream even when every flag says just "synthetic".
BackendProfile resolve_profile(const RunConfig& config, const std::string& spec,
                               const std::string& default_role) {
  auto it = config.profiles.find(spec);
  if (it != config.profiles.end()) {
    BackendProfile profile = it->second;
    if (profile.name.empty()) profile.name = it->first;
    if (profile.role.empty()) profile.role = default_role;
    return profile;
  }
  BackendProfile profile;
  profile.name = default_role;
  profile.role = default_role;
  profile.target = spec;
  return profile;
}

bool is_live(const BackendProfile& profile) {
  return profile.target.rfind("live", 0) == 0;
}

void check_live_env(const BackendProfile& profile, const std::string& flag,
                    std::vector<std::string>& violations) {
  if (!is_live(profile)) return;
  if (std::getenv("CRITICLOOP_API_BASE") == nullptr)
    violations.push_back("--" + flag + " targets a live endpoint but CRITICLOOP_API_BASE is not set");
  if (std::getenv("CRITICLOOP_API_KEY") == nullptr)
    violations.push_back("--" + flag + " targets a live endpoint but CRITICLOOP_API_KEY is not set");
}

// Runs fn over every question with a bounded pool. Results land in
// caller-owned slots indexed by question position, so no locking is needed
// and the output order never depends on scheduling.
template <typename Fn>
void for_each_question(const std::vector<Question>& questions, int parallel, Fn&& fn) {
  if (questions.empty()) return;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < questions.size(); i = next.fetch_add(1))
      fn(questions[i], i);
  };
  int workers = std::min<int>(std::max(parallel, 1), static_cast<int>(questions.size()));
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct Manifest {
  json questions = json::object();
  // Question ids recorded as done by a previous run; resume skips these and
  // keeps their artifact lines verbatim. Failed entries are retried.
  std::set<std::string> done;
};

// Loads the previous manifest for resume. A manifest written by a different
// command or seed would splice incompatible artifacts together, so that is
// refused rather than merged.
std::optional<Manifest> load_manifest(const fs::path& path, const RunConfig& config,
                                      std::string& error) {
  Manifest manifest;
  if (!fs::exists(path)) return manifest;
  json j;
  try {
    j = json::parse(read_file(path.string()));
  } catch (const std::exception& e) {
    error = path.string() + ": unreadable manifest: " + e.what();
    return std::nullopt;
  }
  if (j.value("command", std::string{}) != command_tag(config)) {
    error = path.string() + ": manifest belongs to command '" +
            j.value("command", std::string{}) + "', expected '" + command_tag(config) + "'";
    return std::nullopt;
  }
  if (j.value("seed", std::uint64_t{0}) != config.seed) {
    error = path.string() + ": manifest was written with seed " +
            std::to_string(j.value("seed", std::uint64_t{0})) +
            "; rerun with that seed or remove the directory";
    return std::nullopt;
  }
  for (auto& [id, entry] : j.at("questions").items()) {
    if (entry.value("status", std::string{}) == "ok") {
      manifest.questions[id] = entry;
      manifest.done.insert(id);
    }
  }
  return manifest;
}

void write_manifest(const fs::path& path, const RunConfig& config, const json& questions) {
  json j;
  j["command"] = command_tag(config);
  j["dataset"] = config.dataset_path;
  j["seed"] = config.seed;
  j["questions"] = questions;
  atomic_write_file(path.string(), j.dump(2) + "\n");
}

// Collects the JSONL lines of a previous artifact, grouped by question id,
// keeping only questions the manifest recorded as done. Lines are kept
// verbatim so a resumed rewrite is byte-identical to an uninterrupted run.
std::map<std::string, std::vector<std::string>> load_artifact_lines(
    const fs::path& path, const std::set<std::string>& done) {
  std::map<std::string, std::vector<std::string>> lines;
  if (done.empty() || !fs::exists(path)) return lines;
  std::istringstream in(read_file(path.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string id = json::parse(line).value("question_id", std::string{});
    if (done.count(id)) lines[id].push_back(line);
  }
  return lines;
}

void write_artifact(const fs::path& path,
                    const std::map<std::string, std::vector<std::string>>& lines) {
  std::string out;
  for (const auto& [id, group] : lines)
    for (const auto& line : group) out += line + "\n";
  atomic_write_file(path.string(), out);
}

RunStatus settle(RunSummary& summary) {
  if (summary.questions_failed == 0) return RunStatus::Clean;
  return summary.questions_done + summary.questions_resumed > 0 ? RunStatus::Partial
                                                                : RunStatus::Failed;
}

struct Prepared {
  std::vector<Question> questions;  // sorted by id, limit applied
  std::vector<Question> pending;    // questions a resumed manifest lacks
  Manifest manifest;
  fs::path manifest_path;
  std::unique_ptr<Backend> generator;
  std::unique_ptr<Backend> critic;
  std::unique_ptr<Backend> refiner;
  std::unique_ptr<Backend> teacher;  // only when configured
  std::optional<TemplateSet> templates;
};

// Shared setup for the three executing commands: dataset, templates,
// backends, manifest. Returns nullopt after filling summary on any failure
// that must stop the run before work starts.
std::optional<Prepared> prepare(const RunConfig& config, RunSummary& summary) {
  Prepared prep;

  try {
    prep.questions = load_questions(config.dataset_path);
  } catch (const std::exception& e) {
    summary.status = RunStatus::ConfigInvalid;
    summary.messages.push_back(e.what());
    return std::nullopt;
  }
  std::sort(prep.questions.begin(), prep.questions.end(),
            [](const Question& a, const Question& b) { return a.id < b.id; });
  if (config.limit && static_cast<std::size_t>(*config.limit) < prep.questions.size())
    prep.questions.resize(static_cast<std::size_t>(*config.limit));

  if (config.command == Command::Construct && config.stage.hint_mode == HintMode::ReferenceHint) {
    for (const auto& q : prep.questions) {
      if (!q.reference_solution) {
        summary.status = RunStatus::ConfigInvalid;
        summary.messages.push_back("hint mode reference_hint needs a reference_solution on every question; '" +
                                   q.id + "' has none");
        return std::nullopt;
      }
    }
  }

  try {
    std::string dir = config.template_dir.empty() ? default_template_dir() : config.template_dir;
    prep.templates.emplace(TemplateSet::load(dir));
  } catch (const std::exception& e) {
    summary.status = RunStatus::ConfigInvalid;
    summary.messages.push_back(e.what());
    return std::nullopt;
  }

  std::map<std::string, std::string> golds;
  for (const auto& q : prep.questions) golds[q.id] = q.gold;

  try {
    prep.generator = make_backend(resolve_profile(config, config.generator, "generator"),
                                  config.seed, golds);
    prep.critic = make_backend(resolve_profile(config, config.critic, "critic"),
                               config.seed, golds);
    if (config.command == Command::InferRefine)
      prep.refiner = make_backend(resolve_profile(config, config.refiner, "refiner"),
                                  config.seed, golds);
    if (!config.teacher.empty())
      prep.teacher = make_backend(resolve_profile(config, config.teacher, "teacher"),
                                  config.seed, golds);
  } catch (const std::exception& e) {
    summary.status = RunStatus::ConfigInvalid;
    summary.messages.push_back(e.what());
    return std::nullopt;
  }

  fs::create_directories(config.out_dir);
  prep.manifest_path = fs::path(config.out_dir) / ("manifest." + command_tag(config) + ".json");

  if (config.resume) {
    std::string error;
    auto loaded = load_manifest(prep.manifest_path, config, error);
    if (!loaded) {
      summary.status = RunStatus::ConfigInvalid;
      summary.messages.push_back(error);
      return std::nullopt;
    }
    prep.manifest = std::move(*loaded);
  }

  for (const auto& q : prep.questions) {
    if (prep.manifest.done.count(q.id))
      ++summary.questions_resumed;
    else
      prep.pending.push_back(q);
  }
  return prep;
}

RunSummary run_construct(const RunConfig& config) {
  RunSummary summary;
  auto prep = prepare(config, summary);
  if (!prep) return summary;

  // Stage 1 collects critiques with the teacher; the --critic flag names it
  // unless a separate --teacher is given. Stage 2 puts the student on
  // --critic and keeps --teacher as the fallback collector.
  Backend* stage1_teacher = prep->teacher ? prep->teacher.get() : prep->critic.get();

  std::vector<QuestionStageOutput> outputs(prep->pending.size());
  for_each_question(prep->pending, config.parallel, [&](const Question& q, std::size_t i) {
    if (config.stage.stage == 1) {
      outputs[i] = run_stage1_question(q, *prep->generator, *stage1_teacher, "teacher",
                                       *prep->templates, config.stage);
    } else {
      outputs[i] = run_stage2_question(q, *prep->generator, *prep->critic, "student",
                                       prep->teacher.get(), "teacher", *prep->templates,
                                       config.stage);
    }
  });

  fs::path records_path =
      fs::path(config.out_dir) / ("d" + std::to_string(config.stage.stage) + ".jsonl");
  auto lines = load_artifact_lines(records_path, prep->manifest.done);
  json questions = prep->manifest.questions;

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = outputs[i];
    const std::string& id = prep->pending[i].id;
    json entry;
    entry["status"] = out.outcome.error.empty() ? "ok" : "failed";
    entry["outcome"] = outcome_to_json(out.outcome);
    questions[id] = entry;
    if (!out.outcome.error.empty()) {
      ++summary.questions_failed;
      summary.messages.push_back(id + ": " + out.outcome.error);
      continue;
    }
    ++summary.questions_done;
    auto& group = lines[id];
    for (const auto& record : out.records) group.push_back(record_to_json(record).dump());
    if (group.empty()) lines.erase(id);  // a done question may yield no records
  }

  write_artifact(records_path, lines);
  write_manifest(prep->manifest_path, config, questions);
  summary.status = settle(summary);
  return summary;
}

RunSummary run_infer_refine(const RunConfig& config) {
  RunSummary summary;
  auto prep = prepare(config, summary);
  if (!prep) return summary;

  struct Slot {
    std::optional<RefineTrace> trace;
    std::string error;
  };
  std::vector<Slot> outputs(prep->pending.size());
  for_each_question(prep->pending, config.parallel, [&](const Question& q, std::size_t i) {
    try {
      outputs[i].trace = iterative_refine(q, *prep->generator, *prep->critic, *prep->refiner,
                                          *prep->templates, config.refine);
    } catch (const std::exception& e) {
      outputs[i].error = e.what();
    }
  });

  fs::path traces_path = fs::path(config.out_dir) / "refine_traces.jsonl";
  auto lines = load_artifact_lines(traces_path, prep->manifest.done);
  json questions = prep->manifest.questions;

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string& id = prep->pending[i].id;
    json entry;
    if (outputs[i].trace) {
      const RefineTrace& trace = *outputs[i].trace;
      entry["status"] = "ok";
      entry["invocations"] = trace.invocations;
      entry["rounds"] = trace.rounds.size();
      entry["validated"] = trace.validated;
      lines[id] = {trace_to_json(trace).dump()};
      ++summary.questions_done;
    } else {
      entry["status"] = "failed";
      entry["error"] = outputs[i].error;
      ++summary.questions_failed;
      summary.messages.push_back(id + ": " + outputs[i].error);
    }
    questions[id] = entry;
  }

  write_artifact(traces_path, lines);
  write_manifest(prep->manifest_path, config, questions);
  summary.status = settle(summary);
  return summary;
}

RunSummary run_infer_filter(const RunConfig& config) {
  RunSummary summary;
  auto prep = prepare(config, summary);
  if (!prep) return summary;

  struct Slot {
    std::optional<FilterResult> result;
    std::string error;
  };
  std::vector<Slot> outputs(prep->pending.size());
  for_each_question(prep->pending, config.parallel, [&](const Question& q, std::size_t i) {
    try {
      outputs[i].result = run_filter_question(q, *prep->generator, *prep->critic,
                                              *prep->templates, config.filter_samples,
                                              config.filter);
    } catch (const std::exception& e) {
      outputs[i].error = e.what();
    }
  });

  fs::path results_path = fs::path(config.out_dir) / "filter_results.jsonl";
  auto lines = load_artifact_lines(results_path, prep->manifest.done);
  json questions = prep->manifest.questions;

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string& id = prep->pending[i].id;
    json entry;
    if (outputs[i].result) {
      const FilterResult& result = *outputs[i].result;
      int kept = 0;
      for (const auto& s : result.samples) kept += s.kept ? 1 : 0;
      entry["status"] = "ok";
      entry["invocations"] = result.invocations;
      entry["samples"] = result.samples.size();
      entry["kept"] = kept;
      entry["used_fallback"] = result.used_fallback;
      lines[id] = {filter_to_json(result).dump()};
      ++summary.questions_done;
    } else {
      entry["status"] = "failed";
      entry["error"] = outputs[i].error;
      ++summary.questions_failed;
      summary.messages.push_back(id + ": " + outputs[i].error);
    }
    questions[id] = entry;
  }

  write_artifact(results_path, lines);
  write_manifest(prep->manifest_path, config, questions);
  summary.status = settle(summary);
  return summary;
}

template <typename T>
std::vector<T> read_jsonl(const fs::path& path, T (*from_json)(const json&)) {
  std::vector<T> items;
  std::istringstream in(read_file(path.string()));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      items.push_back(from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

RunSummary run_eval(const RunConfig& config) {
  RunSummary summary;
  fs::path traces_path = fs::path(config.traces_dir) / "refine_traces.jsonl";
  fs::path results_path = fs::path(config.traces_dir) / "filter_results.jsonl";

  std::vector<RefineTrace> traces;
  std::vector<FilterResult> results;
  try {
    if (fs::exists(traces_path)) traces = read_jsonl(traces_path, trace_from_json);
    if (fs::exists(results_path)) results = read_jsonl(results_path, filter_from_json);
  } catch (const std::exception& e) {
    summary.messages.push_back(e.what());
    return summary;
  }
  if (traces.empty() && results.empty()) {
    summary.messages.push_back("nothing to score: neither " + traces_path.string() + " nor " +
                               results_path.string() + " has entries");
    return summary;
  }

  EvalReport report;
  try {
    report = evaluate(traces, results, config.equality);
  } catch (const std::exception& e) {
    summary.messages.push_back(e.what());
    return summary;
  }

  fs::path report_path(config.report_path);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  atomic_write_file(report_path.string(), report_to_json(report).dump(2) + "\n");
  if (config.write_csv) {
    fs::path csv_path = report_path;
    csv_path.replace_extension(".csv");
    atomic_write_file(csv_path.string(), report_to_csv(report));
  }
  summary.questions_done = static_cast<int>(traces.size() + results.size());
  summary.status = RunStatus::Clean;
  summary.messages.push_back("report written to " + report_path.string());
  return summary;
}

}  // namespace

std::vector<std::string> validate(const RunConfig& raw) {
  RunConfig config = normalized(raw);
  std::vector<std::string> violations;

  if (config.parallel < 1) violations.push_back("--parallel must be at least 1");
  if (config.limit && *config.limit < 1) violations.push_back("--limit must be at least 1");

  if (config.command == Command::Eval) {
    if (config.traces_dir.empty())
      violations.push_back("eval needs --traces (or --out) to name the directory to score");
    return violations;
  }

  if (config.dataset_path.empty())
    violations.push_back("--dataset is required");
  else if (!fs::exists(config.dataset_path))
    violations.push_back("--dataset " + config.dataset_path + " does not exist");
  if (config.out_dir.empty()) violations.push_back("--out is required");
  if (config.generator.empty()) violations.push_back("--generator is required");

  if (!config.generator.empty())
    check_live_env(resolve_profile(config, config.generator, "generator"), "generator", violations);
  if (!config.critic.empty())
    check_live_env(resolve_profile(config, config.critic, "critic"), "critic", violations);
  if (config.command == Command::InferRefine && !config.refiner.empty())
    check_live_env(resolve_profile(config, config.refiner, "refiner"), "refiner", violations);
  if (!config.teacher.empty())
    check_live_env(resolve_profile(config, config.teacher, "teacher"), "teacher", violations);

  switch (config.command) {
    case Command::Construct:
      if (config.stage.stage != 1 && config.stage.stage != 2)
        violations.push_back("--stage must be 1 or 2");
      if (config.stage.solutions_per_question < 1)
        violations.push_back("--solutions-per-question must be at least 1");
      if (config.stage.balanced_m < 1)
        violations.push_back("--balanced-m must be at least 1");
      if (config.stage.sample_cap < config.stage.balanced_m)
        violations.push_back("--sample-cap must be at least --balanced-m");
      if (config.stage.semantic_retry < 1)
        violations.push_back("--semantic-retry must be at least 1");
      break;
    case Command::InferRefine:
      if (config.refine.depth < 1) violations.push_back("--depth must be at least 1");
      if (config.refine.restarts < 0) violations.push_back("--restarts must not be negative");
      break;
    case Command::InferFilter:
      if (config.filter_samples < 1) violations.push_back("--samples must be at least 1");
      if (config.filter.malformed_retry < 0)
        violations.push_back("--malformed-retry must not be negative");
      break;
    case Command::Eval:
      break;
  }
  return violations;
}

RunSummary run(const RunConfig& raw) {
  RunConfig config = normalized(raw);
  auto violations = validate(config);
  if (!violations.empty()) {
    RunSummary summary;
    summary.status = RunStatus::ConfigInvalid;
    summary.messages = violations;
    return summary;
  }
  switch (config.command) {
    case Command::Construct:
      return run_construct(config);
    case Command::InferRefine:
      return run_infer_refine(config);
    case Command::InferFilter:
      return run_infer_filter(config);
    case Command::Eval:
      return run_eval(config);
  }
  RunSummary summary;
  summary.messages.push_back("unknown command");
  return summary;
}

int exit_code(RunStatus status) {
  switch (status) {
    case RunStatus::Clean:
      return 0;
    case RunStatus::ConfigInvalid:
      return 2;
    case RunStatus::Partial:
      return 3;
    case RunStatus::Failed:
      return 4;
  }
  return 4;
}

std::map<std::string, BackendProfile> load_profiles(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DatasetError(path + ": " + e.what());
  }
  if (!j.is_object()) throw DatasetError(path + ": expected an object of profiles");
  std::map<std::string, BackendProfile> profiles;
  for (auto& [name, body] : j.items()) {
    if (!body.is_object() || !body.contains("target"))
      throw DatasetError(path + ": profile '" + name + "' needs a target");
    BackendProfile profile;
    profile.name = name;
    profile.role = body.value("role", std::string{});
    profile.target = body.at("target").get<std::string>();
    if (body.contains("temperature")) profile.temperature = body.at("temperature").get<double>();
    if (body.contains("top_p")) profile.top_p = body.at("top_p").get<double>();
    if (body.contains("max_tokens")) profile.max_tokens = body.at("max_tokens").get<int>();
    profile.retry_budget = body.value("retry_budget", profile.retry_budget);
    profile.max_in_flight = body.value("max_in_flight", profile.max_in_flight);
    profiles[name] = profile;
  }
  return profiles;
}

}  // namespace criticloop
