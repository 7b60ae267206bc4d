#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "criticloop/dataset.hpp"
#include "criticloop/prompts.hpp"
#include "criticloop/sha256.hpp"

using namespace criticloop;
namespace fs = std::filesystem;

namespace {

TemplateSet load_shipped() { return TemplateSet::load(CRITICLOOP_TEMPLATE_DIR); }

}  // namespace

TEST_CASE("the shipped template set loads and matches its pinned digests") {
  TemplateSet set = load_shipped();
  const auto& digests = TemplateSet::expected_digests();
  CHECK(digests.size() == 7);
  for (const auto& [name, digest] : digests) {
    std::string body = read_file(std::string(CRITICLOOP_TEMPLATE_DIR) + "/" + name + ".txt");
    CHECK(sha256_hex(body) == digest);
    CHECK(set.get(name).body == body);
  }
  CHECK_THROWS_AS(set.get("no_such_template"), TemplateError);
}

TEST_CASE("placeholders are discovered in order of first appearance") {
  TemplateSet set = load_shipped();
  CHECK(set.get("solve").placeholders == std::vector<std::string>{"problem"});
  CHECK(set.get("critic").placeholders == std::vector<std::string>{"problem", "attempt"});
  CHECK(set.get("refine").placeholders ==
        std::vector<std::string>{"problem", "attempt", "wrong_step_criticism"});
  CHECK(set.get("gsm8k_collect").placeholders == std::vector<std::string>{"problem", "attempt"});
  CHECK(set.get("math_collect_correct").placeholders ==
        std::vector<std::string>{"problem", "attempt"});
  CHECK(set.get("math_collect_incorrect").placeholders ==
        std::vector<std::string>{"problem", "reference_solution", "attempt"});
  CHECK(set.get("hint_removal").placeholders == std::vector<std::string>{"critique_refinement"});
}

TEST_CASE("rendering substitutes bindings and keeps literal braces") {
  TemplateSet set = load_shipped();
  std::string out = render(set.get("solve"), {{"problem", "What is 2 + 2?"}});
  CHECK(out.find("What is 2 + 2?") != std::string::npos);
  CHECK(out.find("{problem}") == std::string::npos);
  // The boxed-format instruction is literal text, not a placeholder.
  CHECK(out.find("\\boxed{answer}") != std::string::npos);

  std::string collect = render(set.get("gsm8k_collect"),
                               {{"problem", "P"}, {"attempt", "Step 1: \\boxed{3}"}});
  CHECK(collect.find("Step 1: \\boxed{3}") != std::string::npos);
  CHECK(collect.find("\\boxed{}") != std::string::npos);
}

TEST_CASE("render spans report exactly where each binding landed") {
  TemplateSet set = load_shipped();
  Bindings bindings{{"problem", "SOME PROBLEM"}, {"attempt", "SOME ATTEMPT"}};
  RenderedPrompt rp = render_traced(set.get("critic"), bindings);
  REQUIRE(rp.spans.size() == 2);
  for (const auto& span : rp.spans)
    CHECK(rp.text.substr(span.begin, span.end - span.begin) == bindings.at(span.name));
}

TEST_CASE("missing and unused bindings are both rejected") {
  TemplateSet set = load_shipped();
  try {
    render(set.get("critic"), {{"problem", "P"}});
    FAIL("expected MissingBinding");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateErrc::MissingBinding);
  }
  try {
    render(set.get("solve"), {{"problem", "P"}, {"reference_solution", "leak"}});
    FAIL("expected UnusedBinding");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateErrc::UnusedBinding);
  }
}

TEST_CASE("a tampered template file fails the checksum at load") {
  fs::path dir = fs::temp_directory_path() / "criticloop_tampered_templates";
  fs::remove_all(dir);
  fs::copy(CRITICLOOP_TEMPLATE_DIR, dir);
  {
    std::ofstream out(dir / "critic.txt", std::ios::app);
    out << "\nextra line\n";
  }
  try {
    TemplateSet::load(dir.string());
    FAIL("expected ChecksumMismatch");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateErrc::ChecksumMismatch);
  }
  fs::remove_all(dir);
}

TEST_CASE("a missing template directory fails to load") {
  try {
    TemplateSet::load("/nonexistent/criticloop/templates");
    FAIL("expected LoadFailed");
  } catch (const TemplateError& e) {
    CHECK(e.code() == TemplateErrc::LoadFailed);
  }
}

TEST_CASE("the template directory environment variable wins") {
  setenv("CRITICLOOP_TEMPLATES", "/tmp/criticloop_env_dir", 1);
  CHECK(default_template_dir() == "/tmp/criticloop_env_dir");
  unsetenv("CRITICLOOP_TEMPLATES");
  CHECK(default_template_dir() != "/tmp/criticloop_env_dir");
}
