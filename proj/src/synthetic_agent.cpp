#include "criticloop/synthetic_agent.hpp"

#include "criticloop/answer_extract.hpp"
#include "criticloop/rng.hpp"
#include "criticloop/text_util.hpp"
#include "criticloop/transcript.hpp"

namespace criticloop {

SyntheticAgent::SyntheticAgent(std::uint64_t seed, SyntheticRates rates,
                               std::map<std::string, std::string> golds, std::size_t attempt_steps)
    : seed_(seed), rates_(rates), golds_(std::move(golds)),
      attempt_steps_(attempt_steps == 0 ? 1 : attempt_steps) {}

std::uint64_t SyntheticAgent::next_call_index(const std::string& key) {
  std::lock_guard<std::mutex> lock(mu_);
  return call_counts_[key]++;
}

const std::string& SyntheticAgent::gold_for(const std::string& key) const {
  auto it = golds_.find(key_question(key));
  if (it == golds_.end())
    throw BackendError(BackendErrc::MalformedResponse,
                       "synthetic agent has no gold answer for key " + key);
  return it->second;
}

std::string SyntheticAgent::wrong_answer(const std::string& gold, std::uint64_t variant) {
  std::string t = trim(gold);
  if (t.empty()) return "#alt" + std::to_string(variant);
  bool numeric = true;
  std::size_t start = (t[0] == '-' || t[0] == '+') ? 1 : 0;
  if (start == t.size()) numeric = false;
  for (std::size_t i = start; i < t.size() && numeric; ++i)
    if (t[i] < '0' || t[i] > '9') numeric = false;
  if (numeric && t.size() - start <= 15) {
    // Offset by variant + 1 so neither variant ever lands back on the gold
    // value; the two variants stay distinct so votes can split.
    long long v = std::stoll(t);
    return std::to_string(v + 1 + static_cast<long long>(variant));
  }
  return t + "#alt" + std::to_string(variant);
}

std::string SyntheticAgent::solve_completion(const std::string& key, std::uint64_t call_index) {
  DecisionStream stream(seed_, key, call_index);
  bool correct = stream.bernoulli(rates_.p_solve_correct);
  std::uint64_t variant = stream.uniform_index(2);
  const std::string& gold = gold_for(key);
  std::string answer = correct ? gold : wrong_answer(gold, variant);

  std::string out;
  for (std::size_t i = 1; i <= attempt_steps_; ++i) {
    if (i > 1) out += "\n\n";
    out += "Step " + std::to_string(i) + ": ";
    if (i < attempt_steps_)
      out += "Carry the given quantities through stage " + std::to_string(i) + " of the computation.";
    else
      out += "Combine the intermediate results. The final answer is \\boxed{" + answer + "}.";
  }
  return out;
}

namespace {

// Pulls the attempt body out of a critique/collect prompt and reports its
// step count and final answer. Falls back to one step / empty answer on
// anything unexpected so the agent still emits a well-formed critique.
struct AttemptView {
  std::size_t steps = 1;
  std::string prediction;
};

AttemptView view_attempt(const std::string& prompt) {
  AttemptView v;
  auto body = between_tags(prompt, "attempt");
  if (!body) return v;
  try {
    Attempt att = parse_attempt(*body);
    v.steps = att.steps.size();
    if (att.prediction) v.prediction = att.prediction->value;
  } catch (const ParseError&) {
    if (auto boxed = extract_boxed(*body)) v.prediction = boxed->value;
  }
  return v;
}

// The flagged step named by the criticism block of a refine prompt.
std::size_t flagged_step_of_criticism(const std::string& prompt) {
  auto block = between_tags(prompt, "criticism");
  std::string text = block ? *block : prompt;
  std::size_t best = 1;
  std::size_t pos = 0;
  while ((pos = find_ci(text, "step", pos)) != std::string::npos) {
    std::size_t p = skip_spaces(text, pos + 4);
    auto num = scan_number(text, p);
    pos += 4;
    if (!num) continue;
    std::size_t q = skip_spaces(text, p);
    if (starts_with_ci(text, q, "is") && starts_with_ci(text, skip_spaces(text, q + 2), "incorrect"))
      best = *num;
  }
  return best;
}

}  // namespace

std::string SyntheticAgent::critique_completion(const std::string& prompt, const std::string& key,
                                                std::uint64_t call_index, bool with_correction) {
  DecisionStream draws(seed_, key, call_index);

  AttemptView attempt = view_attempt(prompt);
  const std::string& gold = gold_for(key);
  bool attempt_correct = answers_equal(attempt.prediction, gold, EqualityMode::Numeric);
  double p_flag = attempt_correct ? rates_.p_flag_given_correct : rates_.p_flag_given_wrong;

  bool flag = draws.bernoulli(p_flag);
  std::size_t flagged_step = static_cast<std::size_t>(draws.uniform_index(attempt.steps));

  std::string out;
  std::size_t upto = flag ? flagged_step : attempt.steps;
  for (std::size_t i = 1; i <= upto; ++i) {
    if (i > 1) out += "\n\n";
    bool is_flagged = flag && i == flagged_step;
    out += "Step " + std::to_string(i) + ": ";
    out += is_flagged
               ? "Re-deriving this step gives a different value, so the computation does not hold."
               : "The work in this step follows from the previous quantities and checks out.";
    out += "\nConclusion: Step " + std::to_string(i) + (is_flagged ? " is incorrect." : " is correct.");
  }

  if (flag && with_correction) {
    bool success = draws.bernoulli(rates_.p_refine_success);
    std::uint64_t variant = draws.uniform_index(2);
    std::string answer = success ? gold : wrong_answer(gold, variant);
    out += "\n\n<correction>\nStep " + std::to_string(flagged_step) +
           ": Redo the flagged computation from the prior step's quantities. The final answer is \\boxed{" +
           answer + "}.\n</correction>";
  }
  return out;
}

std::string SyntheticAgent::refine_completion(const std::string& prompt, const std::string& key,
                                              std::uint64_t call_index) {
  DecisionStream draws(seed_, key, call_index);
  bool success = draws.bernoulli(rates_.p_refine_success);
  std::uint64_t variant = draws.uniform_index(2);
  const std::string& gold = gold_for(key);
  std::string answer = success ? gold : wrong_answer(gold, variant);
  std::size_t k = flagged_step_of_criticism(prompt);

  return "<correction>\nStep " + std::to_string(k) +
         ": Rework the flagged step from the prior quantities. The final answer is \\boxed{" + answer +
         "}.\n</correction>";
}

std::string SyntheticAgent::hint_removal_completion(const std::string& prompt) {
  // The removal prompt is instructions, a "-----" rule, a blank line, then
  // the payload. The agent's own critiques never contain hint phrasing, so
  // echoing the payload is already the cleaned text.
  std::size_t rule = prompt.find("\n-----\n");
  if (rule == std::string::npos) return prompt;
  std::size_t start = rule + 7;
  if (start < prompt.size() && prompt[start] == '\n') ++start;
  return prompt.substr(start);
}

Exchange SyntheticAgent::complete(const std::string& prompt, const std::string& key,
                                  const std::optional<SamplingParams>& params) {
  (void)params;  // sampling knobs do not alter the scripted distributions
  std::uint64_t call_index = next_call_index(key);
  std::string purpose = key_purpose(key);

  std::string completion;
  if (purpose == "solve")
    completion = solve_completion(key, call_index);
  else if (purpose == "critic")
    completion = critique_completion(prompt, key, call_index, /*with_correction=*/false);
  else if (purpose == "collect")
    completion = critique_completion(prompt, key, call_index, /*with_correction=*/true);
  else if (purpose == "refine")
    completion = refine_completion(prompt, key, call_index);
  else if (purpose == "hint_removal")
    completion = hint_removal_completion(prompt);
  else
    throw BackendError(BackendErrc::MalformedResponse, "synthetic agent: unknown purpose in key " + key);

  Exchange ex;
  ex.prompt = prompt;
  ex.completion = std::move(completion);
  ex.prompt_tokens = approx_token_count(ex.prompt);
  ex.completion_tokens = approx_token_count(ex.completion);
  ex.latency_s = 0.0;
  return ex;
}

}  // namespace criticloop
