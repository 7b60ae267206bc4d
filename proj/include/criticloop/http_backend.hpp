#pragma once

#include <string>

#include "criticloop/backend.hpp"

namespace criticloop {

// Retry/backoff knobs, millisecond units. Tests shrink these so fault
// injection stays fast; production defaults back off 250ms doubling to 4s.
struct RetryPolicy {
  int initial_delay_ms = 250;
  double backoff_factor = 2.0;
  int max_delay_ms = 4000;
};

// OpenAI-compatible chat-completions client. One user message per call, no
// system prompt. Transport failures and 429s retry with exponential backoff
// (a Retry-After header wins over the computed delay) up to the profile's
// retry_budget; unparseable payloads raise MalformedResponse without retry.
// Concurrency through one profile is capped at max_in_flight.
class HttpBackend : public Backend {
 public:
  // base_url like "http://host:port" (https when built with TLS support);
  // model is sent verbatim in the request body.
  HttpBackend(BackendProfile profile, std::string base_url, std::string api_key,
              std::string model, RetryPolicy retry = {});

  Exchange complete(const std::string& prompt, const std::string& key,
                    const std::optional<SamplingParams>& params = std::nullopt) override;

 private:
  struct Gate;

  BackendProfile profile_;
  std::string base_url_;
  std::string api_key_;
  std::string model_;
  RetryPolicy retry_;
  std::shared_ptr<Gate> gate_;
};

}  // namespace criticloop
