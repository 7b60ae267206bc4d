#include "criticloop/backend.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "criticloop/http_backend.hpp"
#include "criticloop/rng.hpp"
#include "criticloop/synthetic_agent.hpp"
#include "criticloop/text_util.hpp"

namespace criticloop {

SamplingParams default_params(std::string_view purpose) {
  SamplingParams p;
  p.top_p = 0.95;
  p.max_tokens = 2048;
  p.temperature = (purpose == "solve") ? 0.7 : 0.5;
  return p;
}

std::string make_key(std::string_view question_id, std::string_view purpose) {
  return std::string(question_id) + "/" + std::string(purpose);
}

std::string key_purpose(std::string_view key) {
  std::size_t slash = key.rfind('/');
  return std::string(slash == std::string_view::npos ? key : key.substr(slash + 1));
}

std::string key_question(std::string_view key) {
  std::size_t slash = key.rfind('/');
  return std::string(slash == std::string_view::npos ? std::string_view{} : key.substr(0, slash));
}

std::int64_t approx_token_count(std::string_view text) {
  std::int64_t count = 0;
  bool in_token = false;
  for (char c : text) {
    bool space = is_space(c);
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

ScriptedBackend::ScriptedBackend(BackendProfile profile) : profile_(std::move(profile)) {}

void ScriptedBackend::register_script(const std::string& key, std::vector<std::string> responses) {
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = scripts_.emplace(key, Script{std::move(responses), 0});
  if (!inserted) throw BackendError(BackendErrc::DuplicateKey, "script already registered for " + key);
}

Exchange ScriptedBackend::complete(const std::string& prompt, const std::string& key,
                                   const std::optional<SamplingParams>&) {
  std::string completion;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = scripts_.find(key);
    if (it == scripts_.end())
      throw BackendError(BackendErrc::MalformedResponse, "no script registered for " + key);
    Script& s = it->second;
    if (s.next >= s.responses.size())
      throw BackendError(BackendErrc::MalformedResponse,
                         "script exhausted for " + key + " after " + std::to_string(s.next) + " calls");
    completion = s.responses[s.next++];
    ++total_calls_;
  }

  Exchange ex;
  ex.prompt = prompt;
  ex.completion = std::move(completion);
  ex.prompt_tokens = approx_token_count(ex.prompt);
  ex.completion_tokens = approx_token_count(ex.completion);
  ex.latency_s = 0.0;
  return ex;
}

std::size_t ScriptedBackend::calls(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = scripts_.find(key);
  return it == scripts_.end() ? 0 : it->second.next;
}

std::size_t ScriptedBackend::total_calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return total_calls_;
}

namespace {

// "synthetic:solve_correct=0.6,flag_wrong=0.9" -> rates + step count.
void parse_synthetic_options(std::string_view options, SyntheticRates& rates, std::size_t& steps) {
  std::size_t pos = 0;
  while (pos < options.size()) {
    std::size_t comma = options.find(',', pos);
    if (comma == std::string_view::npos) comma = options.size();
    std::string_view item = options.substr(pos, comma - pos);
    std::size_t eq = item.find('=');
    if (eq == std::string_view::npos)
      throw BackendError(BackendErrc::MalformedResponse,
                         "bad synthetic option (want k=v): " + std::string(item));
    std::string k = trim(item.substr(0, eq));
    std::string v = trim(item.substr(eq + 1));
    double value = std::strtod(v.c_str(), nullptr);
    if (k == "solve_correct") rates.p_solve_correct = value;
    else if (k == "flag_wrong") rates.p_flag_given_wrong = value;
    else if (k == "flag_correct") rates.p_flag_given_correct = value;
    else if (k == "refine_success") rates.p_refine_success = value;
    else if (k == "steps") steps = static_cast<std::size_t>(std::strtoul(v.c_str(), nullptr, 10));
    else
      throw BackendError(BackendErrc::MalformedResponse, "unknown synthetic option: " + k);
    pos = comma + 1;
  }
}

std::unique_ptr<Backend> make_scripted(const BackendProfile& profile, const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw BackendError(BackendErrc::MalformedResponse, "cannot open script file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(BackendErrc::MalformedResponse, path + ": bad JSON: " + e.what());
  }
  auto backend = std::make_unique<ScriptedBackend>(profile);
  for (auto& [key, responses] : j.items())
    backend->register_script(key, responses.get<std::vector<std::string>>());
  return backend;
}

}  // namespace

std::unique_ptr<Backend> make_backend(const BackendProfile& profile, std::uint64_t seed,
                                      const std::map<std::string, std::string>& golds) {
  const std::string& target = profile.target;

  if (target == "synthetic" || target.rfind("synthetic:", 0) == 0) {
    SyntheticRates rates;
    std::size_t steps = 3;
    if (target.size() > 10) parse_synthetic_options(std::string_view(target).substr(10), rates, steps);
    // Mix the profile identity into the seed so two synthetic profiles in one
    // run draw independent streams.
    std::uint64_t mixed = splitmix64(seed ^ fnv1a64(profile.name.empty() ? profile.role : profile.name));
    return std::make_unique<SyntheticAgent>(mixed, rates, golds, steps);
  }

  if (target.rfind("script:", 0) == 0) return make_scripted(profile, target.substr(7));

  if (target == "live" || target.rfind("live:", 0) == 0) {
    const char* base = std::getenv("CRITICLOOP_API_BASE");
    if (!base || !*base)
      throw BackendError(BackendErrc::Transport,
                         "live backend needs CRITICLOOP_API_BASE to be set");
    const char* key = std::getenv("CRITICLOOP_API_KEY");
    std::string model = target.size() > 5 ? target.substr(5) : "default";
    return std::make_unique<HttpBackend>(profile, base, key ? key : "", model);
  }

  throw BackendError(BackendErrc::MalformedResponse, "unknown backend target: " + target);
}

}  // namespace criticloop
