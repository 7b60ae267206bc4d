#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace criticloop {

enum class BackendErrc {
  Transport,          // connection-level failure after retries
  RateLimited,        // surfaced only when retries are exhausted on 429s
  BudgetExhausted,    // transport retry budget spent
  MalformedResponse,  // unparseable payload, or a scripted key ran dry
  DuplicateKey,       // script registered twice for one key
};

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  BackendErrc code() const { return code_; }

 private:
  BackendErrc code_;
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 2048;
};

// Purpose-keyed defaults: solving samples hotter than critiquing/refining.
// Purposes are the last segment of a call key: "solve", "critic", "refine",
// "collect", "hint_removal".
SamplingParams default_params(std::string_view purpose);

// One named model endpoint (or mock) plus its budgets. target picks the
// implementation:
//   "synthetic[:k=v,...]"  deterministic agent with tunable error rates
//   "script:<path>"        scripted responses loaded from a JSON file
//   "live[:<model>]"       OpenAI-compatible chat endpoint
// Optional sampling fields override the purpose defaults when set.
struct BackendProfile {
  std::string name;
  std::string role;  // generator | teacher_critic | student_critic | refiner
  std::string target = "synthetic";
  std::optional<double> temperature;
  std::optional<double> top_p;
  std::optional<int> max_tokens;
  int retry_budget = 16;     // transport retries per logical call
  int max_in_flight = 4;     // concurrent requests through this profile
};

// One completed model call. Mock backends report zero latency so artifact
// files stay byte-identical across runs; token counts for mocks are
// whitespace-token approximations.
struct Exchange {
  std::string prompt;
  std::string completion;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
};

// Call keys are "question_id/purpose". The purpose routes mock behavior and
// picks sampling defaults; live backends ignore it beyond logging.
std::string make_key(std::string_view question_id, std::string_view purpose);
std::string key_purpose(std::string_view key);
std::string key_question(std::string_view key);

class Backend {
 public:
  virtual ~Backend() = default;

  // Issues one completion. params, when absent, falls back to the purpose
  // default merged with the profile overrides.
  virtual Exchange complete(const std::string& prompt, const std::string& key,
                            const std::optional<SamplingParams>& params = std::nullopt) = 0;
};

// Replays canned responses in FIFO order per key. Exhausting a key's script
// or asking for an unregistered key raises MalformedResponse: a scripted run
// that needs more responses than were planned is a broken test, not a retry
// candidate.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(BackendProfile profile = {});

  // Throws DuplicateKey when the key already has a script.
  void register_script(const std::string& key, std::vector<std::string> responses);

  Exchange complete(const std::string& prompt, const std::string& key,
                    const std::optional<SamplingParams>& params = std::nullopt) override;

  // How many completions were served for this key.
  std::size_t calls(const std::string& key) const;
  std::size_t total_calls() const;

 private:
  struct Script {
    std::vector<std::string> responses;
    std::size_t next = 0;
  };

  BackendProfile profile_;
  mutable std::mutex mu_;
  std::map<std::string, Script> scripts_;
  std::size_t total_calls_ = 0;
};

std::int64_t approx_token_count(std::string_view text);

// Builds the backend an inline target string or profile describes. golds maps
// question id -> gold answer and is consumed by synthetic targets; scripted
// targets load their response map from the referenced JSON file; live targets
// read CRITICLOOP_API_BASE / CRITICLOOP_API_KEY.
std::unique_ptr<Backend> make_backend(const BackendProfile& profile, std::uint64_t seed,
                                      const std::map<std::string, std::string>& golds);

}  // namespace criticloop
