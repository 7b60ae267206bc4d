#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"

#include "criticloop/backend.hpp"
#include "criticloop/http_backend.hpp"
#include "criticloop/prompts.hpp"
#include "criticloop/synthetic_agent.hpp"
#include "criticloop/transcript.hpp"

using namespace criticloop;

namespace {

BackendErrc thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const BackendError& e) {
    return e.code();
  }
  FAIL("expected a backend error");
  return BackendErrc::Transport;
}

const std::map<std::string, std::string> kGolds{{"q1", "13"}, {"q2", "60"}};

std::string critic_prompt_for(const std::string& attempt_text) {
  TemplateSet set = TemplateSet::load(CRITICLOOP_TEMPLATE_DIR);
  return render(set.get("critic"), {{"problem", "What is 6 + 7?"}, {"attempt", attempt_text}});
}

}  // namespace

TEST_CASE("key construction round-trips") {
  std::string key = make_key("q7", "critic");
  CHECK(key == "q7/critic");
  CHECK(key_purpose(key) == "critic");
  CHECK(key_question(key) == "q7");
}

TEST_CASE("sampling defaults depend on the call purpose") {
  CHECK(default_params("solve").temperature == doctest::Approx(0.7));
  CHECK(default_params("critic").temperature == doctest::Approx(0.5));
  CHECK(default_params("collect").temperature == doctest::Approx(0.5));
  CHECK(default_params("solve").top_p == doctest::Approx(0.95));
  CHECK(default_params("solve").max_tokens == 2048);
}

TEST_CASE("scripted backends replay responses in order and then refuse") {
  ScriptedBackend backend;
  backend.register_script("q1/solve", {"first", "second"});
  CHECK(backend.complete("p", "q1/solve").completion == "first");
  CHECK(backend.complete("p", "q1/solve").completion == "second");
  CHECK(thrown_code([&] { backend.complete("p", "q1/solve"); }) == BackendErrc::MalformedResponse);
  CHECK(thrown_code([&] { backend.complete("p", "q1/critic"); }) ==
        BackendErrc::MalformedResponse);
  // Refused completions are not served, so they never count.
  CHECK(backend.calls("q1/solve") == 2);
  CHECK(backend.total_calls() == 2);

  CHECK_THROWS_AS(backend.register_script("q1/solve", {"again"}), BackendError);
}

TEST_CASE("scripted scripts are isolated per key under concurrency") {
  ScriptedBackend backend;
  for (int q = 0; q < 8; ++q)
    backend.register_script("q" + std::to_string(q) + "/solve", {"answer " + std::to_string(q)});
  std::vector<std::thread> pool;
  std::atomic<int> mismatches{0};
  for (int q = 0; q < 8; ++q)
    pool.emplace_back([&, q] {
      auto ex = backend.complete("p", "q" + std::to_string(q) + "/solve");
      if (ex.completion != "answer " + std::to_string(q)) ++mismatches;
    });
  for (auto& t : pool) t.join();
  CHECK(mismatches == 0);
  CHECK(backend.total_calls() == 8);
}

TEST_CASE("synthetic completions are deterministic in seed, key, and call index") {
  SyntheticAgent a(42, SyntheticRates{}, kGolds);
  SyntheticAgent b(42, SyntheticRates{}, kGolds);
  std::string p = "## Problem\nWhat is 6 + 7?";
  CHECK(a.complete(p, "q1/solve").completion == b.complete(p, "q1/solve").completion);
  CHECK(a.complete(p, "q1/solve").completion == b.complete(p, "q1/solve").completion);

  // A different seed changes the draw stream somewhere in a short window.
  SyntheticAgent c(43, SyntheticRates{}, kGolds);
  bool any_difference = false;
  for (int i = 0; i < 16 && !any_difference; ++i)
    any_difference = a.complete(p, "q2/solve").completion != c.complete(p, "q2/solve").completion;
  CHECK(any_difference);
}

TEST_CASE("degenerate rates pin the synthetic critic's behavior") {
  SyntheticRates rates;
  rates.p_solve_correct = 0.5;
  rates.p_flag_given_wrong = 1.0;
  rates.p_flag_given_correct = 0.0;
  rates.p_refine_success = 1.0;
  SyntheticAgent agent(7, rates, kGolds);

  std::string right = "Step 1: Add them.\n\nStep 2: The total is \\boxed{13}.";
  std::string wrong = "Step 1: Add them.\n\nStep 2: The total is \\boxed{14}.";

  for (int i = 0; i < 10; ++i) {
    Critique clean = parse_critique(agent.complete(critic_prompt_for(right), "q1/critic").completion, 2);
    CHECK_FALSE(clean.flagged());
    Critique flag = parse_critique(agent.complete(critic_prompt_for(wrong), "q1/critic").completion, 2);
    CHECK(flag.flagged());
  }
}

TEST_CASE("synthetic solve honors the correctness rate at its extremes") {
  SyntheticRates always;
  always.p_solve_correct = 1.0;
  SyntheticAgent agent(3, always, kGolds);
  for (int i = 0; i < 10; ++i) {
    Attempt att = parse_attempt(agent.complete("## Problem\nP", "q1/solve").completion);
    REQUIRE(att.prediction.has_value());
    CHECK(att.prediction->value == "13");
  }

  SyntheticRates never;
  never.p_solve_correct = 0.0;
  SyntheticAgent miss(3, never, kGolds);
  for (int i = 0; i < 10; ++i) {
    Attempt att = parse_attempt(miss.complete("## Problem\nP", "q1/solve").completion);
    REQUIRE(att.prediction.has_value());
    CHECK(att.prediction->value != "13");
  }
}

TEST_CASE("backend targets parse into the right implementations") {
  BackendProfile profile;
  profile.name = "gen";
  profile.role = "generator";

  profile.target = "synthetic:solve_correct=1";
  auto synth = make_backend(profile, 11, kGolds);
  Attempt att = parse_attempt(synth->complete("## Problem\nP", "q1/solve").completion);
  CHECK(att.prediction->value == "13");

  profile.target = "synthetic:bogus_knob=1";
  CHECK(thrown_code([&] { make_backend(profile, 11, kGolds); }) ==
        BackendErrc::MalformedResponse);

  profile.target = "teleport:somewhere";
  CHECK(thrown_code([&] { make_backend(profile, 11, kGolds); }) ==
        BackendErrc::MalformedResponse);

  auto dir = std::filesystem::temp_directory_path() / "criticloop_script_target.json";
  {
    std::ofstream out(dir);
    out << "{\"q1/solve\": [\"Step 1: scripted \\\\boxed{13}\"]}";
  }
  profile.target = "script:" + dir.string();
  auto scripted = make_backend(profile, 11, kGolds);
  CHECK(scripted->complete("p", "q1/solve").completion == "Step 1: scripted \\boxed{13}");
  std::filesystem::remove(dir);

  profile.target = "live:model-x";
  unsetenv("CRITICLOOP_API_BASE");
  try {
    make_backend(profile, 11, kGolds);
    FAIL("expected a transport error naming the environment variable");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrc::Transport);
    CHECK(std::string(e.what()).find("CRITICLOOP_API_BASE") != std::string::npos);
  }
}

namespace {

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit LocalServer(const std::function<void(const httplib::Request&, httplib::Response&)>& handler) {
    server.Post("/v1/chat/completions", handler);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~LocalServer() {
    server.stop();
    thread.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

HttpBackend make_http(const LocalServer& server, int retry_budget) {
  BackendProfile profile;
  profile.name = "live-test";
  profile.role = "generator";
  profile.target = "live:test-model";
  profile.retry_budget = retry_budget;
  RetryPolicy retry;
  retry.initial_delay_ms = 1;
  retry.backoff_factor = 1.0;
  retry.max_delay_ms = 2;
  return HttpBackend(profile, server.base_url(), "testkey", "test-model", retry);
}

}  // namespace

TEST_CASE("the http backend speaks the chat-completions wire format") {
  std::string seen_auth, seen_body;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(
        "{\"choices\":[{\"message\":{\"content\":\"Step 1: done \\\\boxed{4}\"}}],"
        "\"usage\":{\"prompt_tokens\":5,\"completion_tokens\":7}}",
        "application/json");
  });
  HttpBackend backend = make_http(server, 2);
  Exchange ex = backend.complete("solve this", "q1/solve");
  CHECK(ex.completion == "Step 1: done \\boxed{4}");
  CHECK(ex.prompt_tokens == 5);
  CHECK(ex.completion_tokens == 7);
  CHECK(seen_auth == "Bearer testkey");
  CHECK(seen_body.find("\"model\":\"test-model\"") != std::string::npos);
  CHECK(seen_body.find("\"temperature\":0.7") != std::string::npos);
  CHECK(seen_body.find("solve this") != std::string::npos);
}

TEST_CASE("rate limits are retried and eventually succeed") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 429;
      res.set_header("Retry-After", "0");
      return;
    }
    res.set_content("{\"choices\":[{\"message\":{\"content\":\"ok\"}}]}", "application/json");
  });
  HttpBackend backend = make_http(server, 3);
  CHECK(backend.complete("p", "q1/solve").completion == "ok");
  CHECK(hits == 3);
}

TEST_CASE("a persistent rate limit exhausts the budget as RateLimited") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 429;
  });
  HttpBackend backend = make_http(server, 2);
  CHECK(thrown_code([&] { backend.complete("p", "q1/solve"); }) == BackendErrc::RateLimited);
  CHECK(hits == 3);  // one attempt plus retry_budget retries
}

TEST_CASE("server errors are retried and reported as budget exhaustion") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  HttpBackend backend = make_http(server, 2);
  CHECK(thrown_code([&] { backend.complete("p", "q1/solve"); }) == BackendErrc::BudgetExhausted);
  CHECK(hits == 3);
}

TEST_CASE("malformed success bodies are not retried") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.set_content("this is not json", "application/json");
  });
  HttpBackend backend = make_http(server, 5);
  CHECK(thrown_code([&] { backend.complete("p", "q1/solve"); }) ==
        BackendErrc::MalformedResponse);
  CHECK(hits == 1);

  hits = 0;
  LocalServer missing([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.set_content("{\"choices\":[]}", "application/json");
  });
  HttpBackend backend2 = make_http(missing, 5);
  CHECK(thrown_code([&] { backend2.complete("p", "q1/solve"); }) ==
        BackendErrc::MalformedResponse);
  CHECK(hits == 1);
}

TEST_CASE("client errors other than 429 fail fast") {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 404;
  });
  HttpBackend backend = make_http(server, 5);
  CHECK(thrown_code([&] { backend.complete("p", "q1/solve"); }) == BackendErrc::Transport);
  CHECK(hits == 1);
}

TEST_CASE("explicit sampling parameters override the purpose defaults") {
  std::string seen_body;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content("{\"choices\":[{\"message\":{\"content\":\"ok\"}}]}", "application/json");
  });
  HttpBackend backend = make_http(server, 1);
  SamplingParams params;
  params.temperature = 0.2;
  params.top_p = 0.5;
  params.max_tokens = 64;
  backend.complete("p", "q1/solve", params);
  CHECK(seen_body.find("\"temperature\":0.2") != std::string::npos);
  CHECK(seen_body.find("\"max_tokens\":64") != std::string::npos);
}
