#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>

#include "criticloop/backend.hpp"

namespace criticloop {

// Error rates for the deterministic mock agent. Each is an independent
// per-call probability.
struct SyntheticRates {
  double p_solve_correct = 0.5;     // solve reaches the gold answer
  double p_flag_given_wrong = 0.9;  // critique flags a wrong-answer attempt
  double p_flag_given_correct = 0.1;  // critique flags a correct-answer attempt
  double p_refine_success = 0.5;    // refinement/correction reaches gold
};

// A fully deterministic model stand-in that emits well-formed solve /
// critique / collect / refine / hint-removal completions in the shipped
// prompt surface formats, with errors injected at the configured rates.
//
// Determinism contract: every stochastic decision is drawn from
// DecisionStream(seed, key, call_index) where call_index counts completions
// served on that key, with a fixed draw order per purpose:
//   solve:   correct?, wrong-variant
//   critic:  flag?, flagged-step
//   collect: flag?, flagged-step, refine-success?, wrong-variant
//   refine:  refine-success?, wrong-variant
// so identical (seed, rates, call sequence) produce identical transcripts
// regardless of thread scheduling across questions, and test oracles can
// replay the exact decision sequence.
class SyntheticAgent : public Backend {
 public:
  SyntheticAgent(std::uint64_t seed, SyntheticRates rates,
                 std::map<std::string, std::string> golds, std::size_t attempt_steps = 3);

  Exchange complete(const std::string& prompt, const std::string& key,
                    const std::optional<SamplingParams>& params = std::nullopt) override;

  // Deterministic wrong answer #variant (1 or 2) for a gold answer; public so
  // oracles can predict the agent's output without string parsing.
  static std::string wrong_answer(const std::string& gold, std::uint64_t variant);

 private:
  std::uint64_t next_call_index(const std::string& key);

  std::string solve_completion(const std::string& key, std::uint64_t call_index);
  std::string critique_completion(const std::string& prompt, const std::string& key,
                                  std::uint64_t call_index, bool with_correction);
  std::string refine_completion(const std::string& prompt, const std::string& key,
                                std::uint64_t call_index);
  static std::string hint_removal_completion(const std::string& prompt);

  const std::string& gold_for(const std::string& key) const;

  std::uint64_t seed_;
  SyntheticRates rates_;
  std::map<std::string, std::string> golds_;
  std::size_t attempt_steps_;
  std::mutex mu_;
  std::unordered_map<std::string, std::uint64_t> call_counts_;
};

}  // namespace criticloop
