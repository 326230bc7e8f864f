// SPDX-License-Identifier: Apache-2.0
#include "raggym/inference.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

void InferenceConfig::validate() const {
  if (n_candidates < 1) throw Error(ErrorKind::config, "inference.n_candidates must be >= 1");
  if (max_steps < 1) throw Error(ErrorKind::config, "inference.max_steps must be >= 1");
  if (temperature < 0) throw Error(ErrorKind::config, "inference.temperature must be >= 0");
  if (n_candidates >= 2 && temperature <= 0) {
    throw Error(ErrorKind::config, "inference.n_candidates >= 2 requires temperature > 0");
  }
}

void to_json(json& j, const InferenceConfig& c) {
  j = json{{"n_candidates", c.n_candidates},
           {"max_steps", c.max_steps},
           {"temperature", c.temperature},
           {"use_critic", c.use_critic},
           {"force_answer_at_cap", c.force_answer_at_cap}};
}

void from_json(const json& j, InferenceConfig& c) {
  InferenceConfig d;
  c.n_candidates = j.value("n_candidates", d.n_candidates);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.temperature = j.value("temperature", d.temperature);
  c.use_critic = j.value("use_critic", d.use_critic);
  c.force_answer_at_cap = j.value("force_answer_at_cap", d.force_answer_at_cap);
}

void to_json(json& j, const RunResult& r) {
  j = json{{"schema", kResultSchema},
           {"question_id", r.trajectory.question.id},
           {"run_id", r.trajectory.run_id},
           {"seed", r.trajectory.seed},
           {"status", r.failed ? "failed" : "ok"},
           {"answered", r.answered},
           {"n_search_queries", r.n_search_queries},
           {"n_steps", r.trajectory.steps.size()}};
  j["final_answer"] = r.trajectory.final_answer ? json(*r.trajectory.final_answer) : json(nullptr);
  j["outcome_reward"] = r.trajectory.outcome_reward ? json(*r.trajectory.outcome_reward) : json(nullptr);
  j["step_scores"] = r.step_scores ? json(*r.step_scores) : json(nullptr);
  j["error"] = r.error ? json(*r.error) : json(nullptr);
}

void from_json(const json& j, RunResult& r) {
  if (j.value("schema", std::string()) != kResultSchema) {
    throw Error(ErrorKind::invalid_input, "not a " + std::string(kResultSchema) + " record");
  }
  r.trajectory.question.id = j.at("question_id").get<std::string>();
  r.trajectory.run_id = j.value("run_id", std::string());
  r.trajectory.seed = j.value("seed", std::uint64_t{0});
  r.failed = j.at("status").get<std::string>() == "failed";
  r.answered = j.at("answered").get<bool>();
  r.n_search_queries = j.at("n_search_queries").get<int>();
  if (!j.at("final_answer").is_null()) r.trajectory.final_answer = j.at("final_answer").get<std::string>();
  if (!j.at("outcome_reward").is_null()) r.trajectory.outcome_reward = j.at("outcome_reward").get<int>();
  if (j.contains("step_scores") && !j.at("step_scores").is_null()) {
    r.step_scores = j.at("step_scores").get<std::vector<std::vector<double>>>();
  }
  if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
}

Selection select_best(const Critic& critic, std::string_view state_text, std::span<const Action> candidates) {
  if (candidates.empty()) throw Error(ErrorKind::invalid_input, "select_best needs at least one candidate");
  Selection sel;
  sel.scores.reserve(candidates.size());
  for (const auto& a : candidates) {
    const double v = critic.score(state_text, a);
    if (!std::isfinite(v)) throw Error(ErrorKind::scoring, "critic returned a non-finite score", action_text(a));
    sel.scores.push_back(v);
  }
  for (std::size_t i = 1; i < sel.scores.size(); ++i) {
    if (sel.scores[i] > sel.scores[sel.index]) sel.index = i;
  }
  return sel;
}

std::uint64_t step_seed(std::uint64_t episode_seed, int step_index) {
  return derive_seed(episode_seed, "step/" + std::to_string(step_index));
}

std::uint64_t question_seed(std::uint64_t root_seed, std::string_view purpose, std::string_view question_id) {
  return derive_seed(root_seed, std::string(purpose) + "/" + std::string(question_id));
}

RunResult continue_episode(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve, const Critic* critic,
                           const State& start, const InferenceConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.use_critic && !critic) throw Error(ErrorKind::config, "use_critic is set but no critic was given");
  RunResult result;
  result.trajectory.question = start.question;
  result.trajectory.seed = seed;
  if (config.use_critic) result.step_scores.emplace();

  State state = start;
  try {
    while (true) {
      const int t = state.step_index;
      const bool at_cap = t >= config.max_steps;
      const bool force = at_cap && config.force_answer_at_cap;
      ProposalConfig pc{config.n_candidates, config.temperature, step_seed(seed, t), force};
      const auto set = dedupe_candidates(agent.propose_actions(gateway, state, pc));

      StepRecord rec;
      rec.state_snapshot = state;
      rec.candidates = set.actions;
      rec.multiplicity = set.multiplicity;
      rec.raw_completions = set.raw_completions;
      rec.forced = force || !agent.can_search(state);
      if (config.use_critic) {
        const auto sel = select_best(*critic, agent.state_text(state), set.actions);
        rec.chosen_index = static_cast<int>(sel.index);
        rec.scores = sel.scores;
        result.step_scores->push_back(sel.scores);
      }
      const Action action = set.actions[static_cast<std::size_t>(rec.chosen_index)];
      result.trajectory.steps.push_back(std::move(rec));

      if (!action.is_search()) {
        result.trajectory.final_answer = action.payload;
        result.answered = true;
        break;
      }
      if (at_cap) break;  // cap reached with forcing disabled: unanswered
      auto next = agent.advance(gateway, state, action, retrieve);
      state = std::move(std::get<NextState>(next).state);
      ++result.n_search_queries;
    }
    if (result.answered && start.question.gold) {
      result.trajectory.outcome_reward = outcome_reward(*result.trajectory.final_answer, start.question);
    }
  } catch (const Error& e) {
    result.failed = true;
    result.answered = false;
    result.trajectory.final_answer.reset();
    result.trajectory.outcome_reward.reset();
    result.error = std::string(to_string(e.kind())) + ": " + e.what();
    spdlog::warn("episode for question '{}' failed: {}", start.question.id, *result.error);
  }
  return result;
}

RunResult run_episode(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve, const Critic* critic,
                      const Question& question, const InferenceConfig& config, std::uint64_t seed,
                      std::string run_id) {
  auto result = continue_episode(agent, gateway, retrieve, critic, initial_state(question), config, seed);
  result.trajectory.run_id = std::move(run_id);
  return result;
}

std::vector<RunResult> run_episodes(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                    const Critic* critic, std::span<const Question> questions,
                                    const InferenceConfig& config, std::uint64_t root_seed,
                                    const std::string& run_id, int jobs) {
  config.validate();
  std::vector<RunResult> results(questions.size());
  parallel_for(questions.size(), jobs, [&](std::size_t i) {
    results[i] = run_episode(agent, gateway, retrieve, critic, questions[i], config,
                             question_seed(root_seed, "run", questions[i].id), run_id);
  });
  return results;
}

}  // namespace raggym
