#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"

#include "criticloop/runner.hpp"

using namespace criticloop;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fixture_dataset() {
  return std::string(CRITICLOOP_FIXTURE_DIR) + "/questions20.jsonl";
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "criticloop_runner" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

RunConfig construct_config(const fs::path& out) {
  RunConfig config;
  config.command = Command::Construct;
  config.dataset_path = fixture_dataset();
  config.out_dir = out.string();
  config.generator = "synthetic:solve_correct=0.5";
  config.critic = "synthetic:flag_wrong=1,flag_correct=0,refine_success=1";
  config.stage.stage = 1;
  config.stage.solutions_per_question = 2;
  config.seed = 7;
  config.parallel = 2;
  return config;
}

RunConfig refine_config(const fs::path& out) {
  RunConfig config;
  config.command = Command::InferRefine;
  config.dataset_path = fixture_dataset();
  config.out_dir = out.string();
  config.generator = "synthetic:solve_correct=0.6";
  config.critic = "synthetic:flag_wrong=0.9,flag_correct=0.1,refine_success=0.5";
  config.refine.depth = 2;
  config.refine.restarts = 1;
  config.seed = 3;
  config.parallel = 2;
  config.limit = 5;
  return config;
}

// Swaps an environment variable for the test body and puts it back after.
class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    const char* old = std::getenv(name);
    if (old) saved_ = old;
    if (value)
      setenv(name, value, 1);
    else
      unsetenv(name);
  }
  ~EnvGuard() {
    if (saved_)
      setenv(name_, saved_->c_str(), 1);
    else
      unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> saved_;
};

}  // namespace

TEST_CASE("a construct run writes records and a manifest for every question") {
  fs::path out = fresh_dir("construct_clean");
  RunSummary summary = run(construct_config(out));
  CHECK(summary.status == RunStatus::Clean);
  CHECK(summary.questions_done == 20);
  CHECK(summary.questions_failed == 0);
  CHECK(summary.questions_resumed == 0);

  REQUIRE(fs::exists(out / "d1.jsonl"));
  REQUIRE(fs::exists(out / "manifest.construct-stage1.json"));

  json manifest = json::parse(slurp(out / "manifest.construct-stage1.json"));
  CHECK(manifest["command"] == "construct-stage1");
  CHECK(manifest["seed"] == 7);
  REQUIRE(manifest["questions"].size() == 20);
  for (const auto& [id, entry] : manifest["questions"].items()) CHECK(entry["status"] == "ok");

  // Every artifact line is a record, and the stream is sorted by question id.
  std::istringstream lines(slurp(out / "d1.jsonl"));
  std::string line;
  std::string prev_id;
  int records = 0;
  while (std::getline(lines, line)) {
    SupervisionRecord record = record_from_json(json::parse(line));
    CHECK(record.question_id >= prev_id);
    prev_id = record.question_id;
    ++records;
  }
  CHECK(records > 0);
}

TEST_CASE("resuming after a partial run reproduces the uninterrupted bytes") {
  fs::path split = fresh_dir("construct_split");
  fs::path whole = fresh_dir("construct_whole");

  RunConfig first = construct_config(split);
  first.limit = 7;
  RunSummary first_summary = run(first);
  CHECK(first_summary.status == RunStatus::Clean);
  CHECK(first_summary.questions_done == 7);

  RunConfig second = construct_config(split);
  second.resume = true;
  RunSummary second_summary = run(second);
  CHECK(second_summary.status == RunStatus::Clean);
  CHECK(second_summary.questions_done == 13);
  CHECK(second_summary.questions_resumed == 7);

  RunSummary whole_summary = run(construct_config(whole));
  CHECK(whole_summary.status == RunStatus::Clean);

  CHECK(slurp(split / "d1.jsonl") == slurp(whole / "d1.jsonl"));
  CHECK(slurp(split / "manifest.construct-stage1.json") ==
        slurp(whole / "manifest.construct-stage1.json"));
}

TEST_CASE("a resume under a different seed is refused up front") {
  fs::path out = fresh_dir("construct_seed");
  RunConfig config = construct_config(out);
  config.limit = 3;
  REQUIRE(run(config).status == RunStatus::Clean);

  config.resume = true;
  config.seed = 8;
  RunSummary summary = run(config);
  CHECK(summary.status == RunStatus::ConfigInvalid);
  REQUIRE_FALSE(summary.messages.empty());
  CHECK(summary.messages[0].find("seed") != std::string::npos);
}

TEST_CASE("stage 2 lands in its own artifact and manifest names") {
  fs::path out = fresh_dir("construct_stage2");
  RunConfig config = construct_config(out);
  config.stage.stage = 2;
  config.stage.balanced_m = 1;
  config.stage.sample_cap = 8;
  config.teacher = "synthetic:flag_wrong=1,flag_correct=0,refine_success=1";
  config.limit = 6;
  RunSummary summary = run(config);
  CHECK(summary.status == RunStatus::Clean);
  CHECK(fs::exists(out / "d2.jsonl"));
  CHECK(fs::exists(out / "manifest.construct-stage2.json"));
}

TEST_CASE("validation names the flag behind each violation") {
  RunConfig config;
  config.command = Command::InferRefine;
  config.dataset_path = "/no/such/dataset.jsonl";
  config.generator = "synthetic";
  config.refine.depth = 0;
  config.refine.restarts = -1;
  config.parallel = 0;
  auto violations = validate(config);

  auto mentions = [&](const std::string& needle) {
    for (const std::string& v : violations)
      if (v.find(needle) != std::string::npos) return true;
    return false;
  };
  CHECK(mentions("--depth"));
  CHECK(mentions("--restarts"));
  CHECK(mentions("--parallel"));
  CHECK(mentions("--out"));
  CHECK(mentions("/no/such/dataset.jsonl"));
}

TEST_CASE("exit codes follow the documented mapping") {
  CHECK(exit_code(RunStatus::Clean) == 0);
  CHECK(exit_code(RunStatus::ConfigInvalid) == 2);
  CHECK(exit_code(RunStatus::Partial) == 3);
  CHECK(exit_code(RunStatus::Failed) == 4);
}

TEST_CASE("live targets are rejected early when the environment is not set") {
  EnvGuard base("CRITICLOOP_API_BASE", nullptr);
  EnvGuard key("CRITICLOOP_API_KEY", nullptr);

  RunConfig config;
  config.command = Command::InferRefine;
  config.dataset_path = fixture_dataset();
  config.out_dir = (fs::temp_directory_path() / "criticloop_runner" / "never_used").string();
  config.generator = "live:some-model";
  auto violations = validate(config);
  bool base_named = false;
  for (const std::string& v : violations)
    if (v.find("CRITICLOOP_API_BASE") != std::string::npos) base_named = true;
  CHECK(base_named);

  EnvGuard base_set("CRITICLOOP_API_BASE", "http://127.0.0.1:9/v1");
  bool key_named = false;
  for (const std::string& v : validate(config))
    if (v.find("CRITICLOOP_API_KEY") != std::string::npos) key_named = true;
  CHECK(key_named);

  RunSummary summary = run(config);
  CHECK(summary.status == RunStatus::ConfigInvalid);
}

TEST_CASE("refine, filter, and eval can share one output directory") {
  fs::path out = fresh_dir("end_to_end");

  RunSummary refine_summary = run(refine_config(out));
  CHECK(refine_summary.status == RunStatus::Clean);
  CHECK(refine_summary.questions_done == 5);
  REQUIRE(fs::exists(out / "refine_traces.jsonl"));
  CHECK(line_count(slurp(out / "refine_traces.jsonl")) == 5);

  RunConfig filter_config = refine_config(out);
  filter_config.command = Command::InferFilter;
  filter_config.filter_samples = 4;
  RunSummary filter_summary = run(filter_config);
  CHECK(filter_summary.status == RunStatus::Clean);
  REQUIRE(fs::exists(out / "filter_results.jsonl"));
  CHECK(line_count(slurp(out / "filter_results.jsonl")) == 5);
  CHECK(fs::exists(out / "manifest.infer-refine.json"));
  CHECK(fs::exists(out / "manifest.infer-filter.json"));

  RunConfig eval_config;
  eval_config.command = Command::Eval;
  eval_config.traces_dir = out.string();
  eval_config.write_csv = true;
  RunSummary eval_summary = run(eval_config);
  CHECK(eval_summary.status == RunStatus::Clean);
  REQUIRE_FALSE(eval_summary.messages.empty());
  CHECK(eval_summary.messages[0].find("report written to") != std::string::npos);

  REQUIRE(fs::exists(out / "report.json"));
  json report = json::parse(slurp(out / "report.json"));
  CHECK(report.contains("refine"));
  CHECK(report.contains("filter"));
  CHECK(report.contains("levels"));
  CHECK(report.contains("cost"));
  CHECK(report["refine"]["cases"] == 5);
  CHECK(report["filter"]["cases"] == 5);
  CHECK(fs::exists(out / "report.csv"));
}

TEST_CASE("an eval over a directory with no artifacts fails loudly") {
  fs::path out = fresh_dir("eval_empty");
  RunConfig config;
  config.command = Command::Eval;
  config.traces_dir = out.string();
  RunSummary summary = run(config);
  CHECK(summary.status == RunStatus::Failed);
  CHECK(exit_code(summary.status) == 4);
}

TEST_CASE("profile names resolve through the registry, inline targets pass through") {
  fs::path out = fresh_dir("profiles");
  RunConfig config = construct_config(out);
  config.limit = 3;
  BackendProfile gen;
  gen.name = "gen";
  gen.role = "generator";
  gen.target = "synthetic:solve_correct=1";
  config.profiles["gen"] = gen;
  config.generator = "gen";
  RunSummary summary = run(config);
  CHECK(summary.status == RunStatus::Clean);
  CHECK(summary.questions_done == 3);
}

TEST_CASE("profile files load by name and reject entries without a target") {
  fs::path dir = fresh_dir("profile_files");
  fs::path good = dir / "profiles.json";
  {
    std::ofstream outfile(good);
    outfile << R"({"gen": {"role": "generator", "target": "synthetic:solve_correct=1",
                  "temperature": 0.3, "max_tokens": 128, "retry_budget": 5}})";
  }
  auto profiles = load_profiles(good.string());
  REQUIRE(profiles.count("gen") == 1);
  CHECK(profiles["gen"].name == "gen");
  CHECK(profiles["gen"].role == "generator");
  CHECK(profiles["gen"].target == "synthetic:solve_correct=1");
  REQUIRE(profiles["gen"].temperature.has_value());
  CHECK(*profiles["gen"].temperature == doctest::Approx(0.3));
  CHECK(profiles["gen"].retry_budget == 5);

  fs::path bad = dir / "bad.json";
  {
    std::ofstream outfile(bad);
    outfile << R"({"gen": {"role": "generator"}})";
  }
  CHECK_THROWS_AS(load_profiles(bad.string()), DatasetError);
}
