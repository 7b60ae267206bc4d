#include "criticloop/http_backend.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

// CPPHTTPLIB_OPENSSL_SUPPORT comes from the build system when OpenSSL is
// available, applied to every consumer so httplib's layouts stay consistent.
#include "httplib.h"

#include <nlohmann/json.hpp>

namespace criticloop {

namespace {

using json = nlohmann::json;

// Splits "http://host:port/v1" into the part httplib wants ("http://host:port")
// and the path prefix requests get mounted under ("/v1").
std::pair<std::string, std::string> split_base(const std::string& base_url) {
  std::size_t scheme = base_url.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t path = base_url.find('/', host_start);
  if (path == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path), prefix};
}

std::optional<int> retry_after_seconds(const httplib::Response& res) {
  if (!res.has_header("Retry-After")) return std::nullopt;
  std::string v = res.get_header_value("Retry-After");
  char* end = nullptr;
  long secs = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || secs < 0) return std::nullopt;  // HTTP-date form, ignore
  return static_cast<int>(secs);
}

}  // namespace

// In-flight cap, shared by every call through one profile. A plain
// mutex/condvar pair instead of std::counting_semaphore so the limit can come
// from runtime config rather than a template argument.
struct HttpBackend::Gate {
  explicit Gate(int limit) : available(limit < 1 ? 1 : limit) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return available > 0; });
    --available;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mu);
      ++available;
    }
    cv.notify_one();
  }

  std::mutex mu;
  std::condition_variable cv;
  int available;
};

HttpBackend::HttpBackend(BackendProfile profile, std::string base_url, std::string api_key,
                         std::string model, RetryPolicy retry)
    : profile_(std::move(profile)),
      base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      retry_(retry),
      gate_(std::make_shared<Gate>(profile_.max_in_flight)) {}

Exchange HttpBackend::complete(const std::string& prompt, const std::string& key,
                               const std::optional<SamplingParams>& params) {
  SamplingParams eff;
  if (params) {
    eff = *params;
  } else {
    eff = default_params(key_purpose(key));
    if (profile_.temperature) eff.temperature = *profile_.temperature;
    if (profile_.top_p) eff.top_p = *profile_.top_p;
    if (profile_.max_tokens) eff.max_tokens = *profile_.max_tokens;
  }

  json body = {
      {"model", model_},
      {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
      {"temperature", eff.temperature},
      {"top_p", eff.top_p},
      {"max_tokens", eff.max_tokens},
  };
  std::string payload = body.dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto [host, prefix] = split_base(base_url_);
  std::string path = prefix + "/chat/completions";

  gate_->acquire();
  struct Release {
    Gate* g;
    ~Release() { g->release(); }
  } release{gate_.get()};

  const int max_attempts = (profile_.retry_budget < 0 ? 0 : profile_.retry_budget) + 1;
  int delay_ms = retry_.initial_delay_ms;
  bool last_was_rate_limit = false;
  std::string last_detail;

  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms = static_cast<int>(delay_ms * retry_.backoff_factor);
      if (delay_ms > retry_.max_delay_ms) delay_ms = retry_.max_delay_ms;
    }

    httplib::Client client(host);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(300, 0);
    client.set_write_timeout(60, 0);

    auto started = std::chrono::steady_clock::now();
    httplib::Result res = client.Post(path, headers, payload, "application/json");
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (!res) {
      last_was_rate_limit = false;
      last_detail = httplib::to_string(res.error());
      continue;
    }

    if (res->status == 429) {
      last_was_rate_limit = true;
      last_detail = "HTTP 429";
      if (auto advised = retry_after_seconds(*res)) delay_ms = *advised * 1000;
      continue;
    }

    if (res->status >= 500) {
      last_was_rate_limit = false;
      last_detail = "HTTP " + std::to_string(res->status);
      continue;
    }

    if (res->status != 200)
      throw BackendError(BackendErrc::Transport,
                         key + ": HTTP " + std::to_string(res->status) + " from " + host + path);

    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError(BackendErrc::MalformedResponse, key + ": unparseable body: " + e.what());
    }

    if (!parsed.contains("choices") || !parsed["choices"].is_array() || parsed["choices"].empty() ||
        !parsed["choices"][0].contains("message") ||
        !parsed["choices"][0]["message"].contains("content") ||
        !parsed["choices"][0]["message"]["content"].is_string())
      throw BackendError(BackendErrc::MalformedResponse,
                         key + ": response lacks choices[0].message.content");

    Exchange ex;
    ex.prompt = prompt;
    ex.completion = parsed["choices"][0]["message"]["content"].get<std::string>();
    ex.latency_s = elapsed;
    if (parsed.contains("usage") && parsed["usage"].is_object()) {
      const json& usage = parsed["usage"];
      ex.prompt_tokens = usage.value("prompt_tokens", std::int64_t{0});
      ex.completion_tokens = usage.value("completion_tokens", std::int64_t{0});
    }
    if (ex.prompt_tokens <= 0) ex.prompt_tokens = approx_token_count(ex.prompt);
    if (ex.completion_tokens <= 0) ex.completion_tokens = approx_token_count(ex.completion);
    return ex;
  }

  if (last_was_rate_limit)
    throw BackendError(BackendErrc::RateLimited,
                       key + ": still rate limited after " + std::to_string(max_attempts) +
                           " attempts");
  throw BackendError(BackendErrc::BudgetExhausted,
                     key + ": transport retry budget spent (" + std::to_string(max_attempts) +
                         " attempts, last: " + last_detail + ")");
}

}  // namespace criticloop
