// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raggym/agents.hpp"
#include "raggym/critic.hpp"

/// Episode execution: greedy runs and critic-guided best-of-N selection.
namespace raggym {

struct InferenceConfig {
  int n_candidates = 1;
  int max_steps = 10;
  double temperature = 0.0;
  bool use_critic = false;
  bool force_answer_at_cap = true;

  void validate() const;
  bool operator==(const InferenceConfig&) const = default;
};

void to_json(json& j, const InferenceConfig& c);
void from_json(const json& j, InferenceConfig& c);

struct RunResult {
  Trajectory trajectory;
  bool answered = false;
  int n_search_queries = 0;
  std::optional<std::vector<std::vector<double>>> step_scores;
  bool failed = false;
  std::optional<std::string> error;

  const std::string& question_id() const { return trajectory.question.id; }
};

/// Results JSONL rows carry the question id and outcome but not the
/// trajectory, which is written separately.
void to_json(json& j, const RunResult& r);
/// Restores everything except the trajectory steps.
void from_json(const json& j, RunResult& r);

inline constexpr std::string_view kResultSchema = "raggym.result.v1";

struct Selection {
  std::size_t index = 0;
  std::vector<double> scores;
};

/// Argmax of the critic's scores, lowest index on ties.
Selection select_best(const Critic& critic, std::string_view state_text, std::span<const Action> candidates);

/// Per-step proposal seed, shared by inference and collection.
std::uint64_t step_seed(std::uint64_t episode_seed, int step_index);

/// Runs from `start` until an answer or the step cap. `critic` is required
/// when config.use_critic is set. Errors mark the result failed; the
/// partial trajectory is kept for diagnosis but carries no answer.
RunResult continue_episode(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve, const Critic* critic,
                           const State& start, const InferenceConfig& config, std::uint64_t seed);

RunResult run_episode(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve, const Critic* critic,
                      const Question& question, const InferenceConfig& config, std::uint64_t seed,
                      std::string run_id = {});

/// Question seeds are derived from the root seed and the question id, so
/// results do not depend on `jobs`.
std::vector<RunResult> run_episodes(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                    const Critic* critic, std::span<const Question> questions,
                                    const InferenceConfig& config, std::uint64_t root_seed,
                                    const std::string& run_id, int jobs = 1);

std::uint64_t question_seed(std::uint64_t root_seed, std::string_view purpose, std::string_view question_id);

}  // namespace raggym
