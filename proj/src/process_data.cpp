// SPDX-License-Identifier: Apache-2.0
#include "raggym/process_data.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

std::string_view to_string(AnnotatorKind k) {
  switch (k) {
    case AnnotatorKind::llm: return "llm";
    case AnnotatorKind::rollout: return "rollout";
    case AnnotatorKind::human_file: return "human_file";
  }
  return "llm";
}

AnnotatorKind parse_annotator_kind(std::string_view s) {
  if (s == "llm") return AnnotatorKind::llm;
  if (s == "rollout") return AnnotatorKind::rollout;
  if (s == "human_file" || s == "human-file") return AnnotatorKind::human_file;
  throw Error(ErrorKind::config, "unknown annotator '" + std::string(s) + "'");
}

PreferenceSource source_of(AnnotatorKind k) {
  switch (k) {
    case AnnotatorKind::llm: return PreferenceSource::llm_annotation;
    case AnnotatorKind::rollout: return PreferenceSource::rollout;
    case AnnotatorKind::human_file: return PreferenceSource::human_file;
  }
  return PreferenceSource::llm_annotation;
}

void to_json(json& j, const RolloutLog& r) {
  j = json{{"candidate", r.candidate},
           {"rollout", r.rollout},
           {"outcome", r.outcome},
           {"n_search_queries", r.n_search_queries}};
  j["final_answer"] = r.final_answer ? json(*r.final_answer) : json(nullptr);
}

void from_json(const json& j, RolloutLog& r) {
  r.candidate = j.at("candidate").get<int>();
  r.rollout = j.at("rollout").get<int>();
  r.outcome = j.at("outcome").get<int>();
  r.n_search_queries = j.at("n_search_queries").get<int>();
  if (!j.at("final_answer").is_null()) r.final_answer = j.at("final_answer").get<std::string>();
}

void validate_permutation(const std::vector<int>& ranked, std::size_t n) {
  if (ranked.size() != n) {
    throw Error(ErrorKind::annotation, fmt::format("ranking has {} entries for {} candidates", ranked.size(), n));
  }
  std::vector<bool> seen(n, false);
  for (int i : ranked) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw Error(ErrorKind::annotation, fmt::format("ranking index {} out of range", i));
    }
    if (seen[static_cast<std::size_t>(i)]) throw Error(ErrorKind::annotation, fmt::format("ranking repeats index {}", i));
    seen[static_cast<std::size_t>(i)] = true;
  }
}

std::vector<int> ranking_from_scores(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<double> rollout_scores(std::span<const RolloutLog> logs, std::size_t n_candidates) {
  std::vector<double> wins(n_candidates, 0.0), total(n_candidates, 0.0);
  for (const auto& log : logs) {
    const auto c = static_cast<std::size_t>(log.candidate);
    if (c >= n_candidates) throw Error(ErrorKind::annotation, "rollout log names an unknown candidate");
    total[c] += 1;
    wins[c] += log.outcome == 1 ? 1 : 0;
  }
  std::vector<double> out(n_candidates, 0.0);
  for (std::size_t c = 0; c < n_candidates; ++c) out[c] = total[c] > 0 ? wins[c] / total[c] : 0.0;
  return out;
}

std::string render_actions(std::span<const Action> candidates) {
  std::string out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i > 0) out += "\n";
    const auto& a = candidates[i];
    out += fmt::format("{}. {}: {}", i, a.is_search() ? "Search" : "Answer", a.payload);
  }
  return out;
}

ChatRequest render_rank_prompt(const Agent& agent, const State& state, std::span<const Action> candidates) {
  ChatRequest req;
  req.user = render_template(agent.prompts().rank, {{"question", agent.render_question(state.question)},
                                                    {"curr_history", agent.render_history(state)},
                                                    {"actions_text", render_actions(candidates)}});
  req.generation.max_tokens = agent.options().max_tokens;
  return req;
}

namespace {

std::vector<int> parse_ranking(std::string_view completion, std::size_t n) {
  const auto obj = extract_last_json_object(completion);
  if (!obj) throw Error(ErrorKind::annotation, "no JSON object in ranking reply");
  if (!obj->contains("ranked_indices") || !obj->at("ranked_indices").is_array()) {
    throw Error(ErrorKind::annotation, "ranking reply lacks ranked_indices");
  }
  std::vector<int> ranked;
  for (const auto& v : obj->at("ranked_indices")) {
    if (!v.is_number_integer()) throw Error(ErrorKind::annotation, "ranked_indices holds a non-integer");
    ranked.push_back(v.get<int>());
  }
  validate_permutation(ranked, n);
  return ranked;
}

}  // namespace

RankingAnnotation rank_with_llm(Gateway& gateway, const Agent& agent, const State& state,
                                std::span<const Action> candidates, int max_retries, std::uint64_t seed) {
  if (candidates.empty()) throw Error(ErrorKind::invalid_input, "ranking needs at least one candidate");
  const ChatRequest base = render_rank_prompt(agent, state, candidates);
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    ChatRequest req = base;
    if (attempt > 0) {
      req.user += "\n\n### Format Correction\nYour previous ranking was invalid (" + last_error +
                  "). Output a permutation of all indices from 0 to " + std::to_string(candidates.size() - 1) + ".";
    }
    req.generation.seed = derive_seed(seed, "rank/" + std::to_string(attempt));
    const std::string raw = gateway.complete(Role::annotator, req).front();
    try {
      RankingAnnotation a;
      a.ranked_indices = parse_ranking(raw, candidates.size());
      a.annotator = AnnotatorKind::llm;
      a.raw = raw;
      return a;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::annotation, fmt::format("no valid ranking after {} attempts: {}", max_retries + 1, last_error),
              state.question.id);
}

RankingAnnotation rank_by_rollout(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                  const State& state, std::span<const Action> candidates, const RolloutConfig& config) {
  if (config.m < 1) throw Error(ErrorKind::invalid_input, "rollout annotation needs m >= 1");
  if (candidates.empty()) throw Error(ErrorKind::invalid_input, "ranking needs at least one candidate");
  if (!state.question.gold) throw Error(ErrorKind::annotation, "rollout annotation needs a gold answer", state.question.id);

  InferenceConfig rollout_cfg;
  rollout_cfg.n_candidates = 1;
  rollout_cfg.max_steps = config.max_steps;
  rollout_cfg.temperature = config.temperature;

  RankingAnnotation a;
  a.annotator = AnnotatorKind::rollout;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Action& action = candidates[c];
    if (!action.is_search()) {
      const int outcome = outcome_reward(action.payload, state.question);
      for (int m = 0; m < config.m; ++m) {
        a.rollouts.push_back(RolloutLog{static_cast<int>(c), m, action.payload, outcome, 0});
      }
      continue;
    }
    State next;
    try {
      next = std::get<NextState>(agent.advance(gateway, state, action, retrieve)).state;
    } catch (const Error& e) {
      throw Error(ErrorKind::annotation, std::string("rollout could not execute candidate: ") + e.what(),
                  state.question.id);
    }
    for (int m = 0; m < config.m; ++m) {
      const auto seed = derive_seed(config.seed, fmt::format("rollout/{}/{}", c, m));
      const auto r = continue_episode(agent, gateway, retrieve, nullptr, next, rollout_cfg, seed);
      if (r.failed) throw Error(ErrorKind::annotation, "rollout failed: " + r.error.value_or(""), state.question.id);
      a.rollouts.push_back(RolloutLog{static_cast<int>(c), m, r.trajectory.final_answer,
                                      r.trajectory.outcome_reward.value_or(0), r.n_search_queries + 1});
    }
  }
  a.scores = rollout_scores(a.rollouts, candidates.size());
  a.ranked_indices = ranking_from_scores(*a.scores);
  a.raw = dump_line(json(*a.scores));
  return a;
}

RankingAnnotation LlmAnnotator::annotate(const AnnotationContext& ctx, const State& state,
                                         const std::vector<Action>& candidates) const {
  return rank_with_llm(ctx.gateway, ctx.agent, state, candidates, max_retries_, derive_seed(ctx.seed, "annotate"));
}

RolloutAnnotator::RolloutAnnotator(int m, double temperature) : m_(m), temperature_(temperature) {
  if (m_ < 1) throw Error(ErrorKind::config, "rollout annotator needs m >= 1");
  if (m_ > 1 && temperature_ <= 0) {
    spdlog::warn("rollout annotator with m={} at temperature 0 repeats identical rollouts", m_);
  }
}

RankingAnnotation RolloutAnnotator::annotate(const AnnotationContext& ctx, const State& state,
                                             const std::vector<Action>& candidates) const {
  return rank_by_rollout(ctx.agent, ctx.gateway, ctx.retrieve, state, candidates,
                         RolloutConfig{m_, ctx.max_steps, temperature_, derive_seed(ctx.seed, "annotate")});
}

HumanFileAnnotator::HumanFileAnnotator(const std::filesystem::path& path) {
  std::size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    try {
      Row r;
      r.ranked_indices = row.at("ranked_indices").get<std::vector<int>>();
      if (row.contains("candidates")) r.candidates = row.at("candidates").get<std::vector<std::string>>();
      auto key = std::make_pair(row.at("question_id").get<std::string>(), row.at("step_index").get<int>());
      if (!rows_.emplace(key, std::move(r)).second) {
        throw Error(ErrorKind::config, fmt::format("duplicate annotation for ({}, {})", key.first, key.second),
                    path.string());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config, fmt::format("malformed annotation on row {}: {}", line, e.what()), path.string());
    }
  }
}

RankingAnnotation HumanFileAnnotator::annotate(const AnnotationContext&, const State& state,
                                               const std::vector<Action>& candidates) const {
  const auto it = rows_.find({state.question.id, state.step_index});
  if (it == rows_.end()) {
    throw Error(ErrorKind::annotation, fmt::format("no human annotation for step {}", state.step_index),
                state.question.id);
  }
  if (it->second.candidates) {
    std::vector<std::string> texts;
    for (const auto& a : candidates) texts.push_back(action_text(a));
    if (texts != *it->second.candidates) {
      throw Error(ErrorKind::annotation,
                  fmt::format("human annotation for step {} ranks different candidates", state.step_index),
                  state.question.id);
    }
  }
  validate_permutation(it->second.ranked_indices, candidates.size());
  RankingAnnotation a;
  a.ranked_indices = it->second.ranked_indices;
  a.annotator = AnnotatorKind::human_file;
  a.raw = dump_line(json(a.ranked_indices));
  return a;
}

std::string_view to_string(Pairing p) { return p == Pairing::top_vs_rest ? "top_vs_rest" : "top_vs_last"; }

Pairing parse_pairing(std::string_view s) {
  if (s == "top_vs_rest") return Pairing::top_vs_rest;
  if (s == "top_vs_last") return Pairing::top_vs_last;
  throw Error(ErrorKind::config, "unknown pairing '" + std::string(s) + "'");
}

void CollectionConfig::validate() const {
  if (n_candidates < 1) throw Error(ErrorKind::config, "collection.n_candidates must be >= 1");
  if (max_steps < 1) throw Error(ErrorKind::config, "collection.max_steps must be >= 1");
  if (n_candidates >= 2 && temperature <= 0) {
    throw Error(ErrorKind::config, "collection.n_candidates >= 2 requires temperature > 0");
  }
}

CollectionResult collect_trajectory(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                    const Annotator& annotator, const Question& question,
                                    const CollectionConfig& config, std::uint64_t seed) {
  config.validate();
  CollectionResult result;
  result.trajectory.question = question;
  result.trajectory.seed = seed;
  State state = initial_state(question);
  try {
    while (true) {
      const int t = state.step_index;
      const bool force = t >= config.max_steps;
      const auto sseed = step_seed(seed, t);
      const auto set = dedupe_candidates(
          agent.propose_actions(gateway, state, ProposalConfig{config.n_candidates, config.temperature, sseed, force}));

      RankingAnnotation ann;
      ann.annotator = annotator.kind();
      if (set.actions.size() == 1) {
        ann.ranked_indices = {0};
      } else {
        ann = annotator.annotate(AnnotationContext{agent, gateway, retrieve, sseed, config.max_steps}, state,
                                 set.actions);
        validate_permutation(ann.ranked_indices, set.actions.size());
      }

      StepRecord rec;
      rec.state_snapshot = state;
      rec.candidates = set.actions;
      rec.multiplicity = set.multiplicity;
      rec.raw_completions = set.raw_completions;
      rec.ranking = ann.ranked_indices;
      rec.scores = ann.scores;
      rec.chosen_index = ann.ranked_indices.front();
      rec.forced = force || !agent.can_search(state);
      const Action action = rec.candidates[static_cast<std::size_t>(rec.chosen_index)];
      result.trajectory.steps.push_back(std::move(rec));
      result.annotations.push_back(std::move(ann));

      if (!action.is_search()) {
        result.trajectory.final_answer = action.payload;
        break;
      }
      state = std::move(std::get<NextState>(agent.advance(gateway, state, action, retrieve)).state);
    }
    if (question.gold) result.trajectory.outcome_reward = outcome_reward(*result.trajectory.final_answer, question);
  } catch (const Error& e) {
    result.usable = false;
    result.error = std::string(to_string(e.kind())) + ": " + e.what();
    result.trajectory.final_answer.reset();
    result.trajectory.outcome_reward.reset();
    spdlog::warn("collection for question '{}' unusable: {}", question.id, *result.error);
  }
  return result;
}

FilterResult filter_by_outcome(std::span<const Trajectory> trajectories) {
  FilterResult out;
  for (const auto& t : trajectories) {
    if (!t.outcome_reward) throw Error(ErrorKind::invalid_input, "trajectory has no outcome reward", t.question.id);
    ++out.stats.sampled;
    if (*t.outcome_reward == 1) {
      out.retained.push_back(t);
      ++out.stats.retained;
    } else {
      ++out.stats.dropped;
    }
  }
  return out;
}

std::string prompt_text(const ChatRequest& request) {
  return request.system.empty() ? request.user : request.system + "\n\n" + request.user;
}

std::vector<PreferenceTuple> build_preference_pairs(const Trajectory& trajectory, const Agent& agent, Pairing pairing,
                                                    PreferenceSource source) {
  if (trajectory.outcome_reward != 1) {
    throw Error(ErrorKind::invalid_input, "preference pairs need a trajectory with outcome_reward = 1",
                trajectory.question.id);
  }
  std::vector<PreferenceTuple> out;
  for (const auto& step : trajectory.steps) {
    if (step.candidates.size() < 2) continue;
    const std::vector<int> ranking = step.ranking ? *step.ranking : std::vector<int>{};
    validate_permutation(ranking, step.candidates.size());
    const ChatRequest prompt = agent.render_prompt(step.state_snapshot, step.forced);
    const std::string state_text = agent.state_text(step.state_snapshot);
    auto raw = [&](int i) {
      const auto k = static_cast<std::size_t>(i);
      return k < step.raw_completions.size() ? step.raw_completions[k] : std::string();
    };
    const int top = ranking.front();
    std::vector<int> lower(ranking.begin() + 1, ranking.end());
    if (pairing == Pairing::top_vs_last) lower = {ranking.back()};
    for (int r : lower) {
      PreferenceTuple t;
      t.state = step.state_snapshot;
      t.preferred = step.candidates[static_cast<std::size_t>(top)];
      t.rejected = step.candidates[static_cast<std::size_t>(r)];
      t.source = source;
      t.state_text = state_text;
      t.prompt_system = prompt.system;
      t.prompt_user = prompt.user;
      t.preferred_raw = raw(top);
      t.rejected_raw = raw(r);
      out.push_back(std::move(t));
    }
  }
  return out;
}

void CollectedDataset::validate() const {
  if (filter_stats.retained + filter_stats.dropped != filter_stats.sampled) {
    throw Error(ErrorKind::invalid_input, "filter stats do not add up");
  }
}

CollectionRun run_collection(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                             const Annotator& annotator, std::span<const Question> questions,
                             const CollectionConfig& config, std::uint64_t root_seed, const std::string& run_id,
                             int jobs) {
  config.validate();
  CollectionRun run;
  run.results.resize(questions.size());
  parallel_for(questions.size(), jobs, [&](std::size_t i) {
    run.results[i] = collect_trajectory(agent, gateway, retrieve, annotator, questions[i], config,
                                        question_seed(root_seed, "collect", questions[i].id));
    run.results[i].trajectory.run_id = run_id;
  });

  std::vector<Trajectory> scored;
  for (const auto& r : run.results) {
    if (!r.usable) {
      ++run.unusable;
      continue;
    }
    if (!r.trajectory.outcome_reward) {
      throw Error(ErrorKind::unscorable, "collection needs gold answers for outcome filtering", r.trajectory.question.id);
    }
    scored.push_back(r.trajectory);
  }
  auto filtered = filter_by_outcome(scored);
  run.dataset.provenance = run_id;
  run.dataset.filter_stats = filtered.stats;
  for (const auto& t : filtered.retained) {
    auto tuples = build_preference_pairs(t, agent, config.pairing, source_of(annotator.kind()));
    run.dataset.tuples.insert(run.dataset.tuples.end(), std::make_move_iterator(tuples.begin()),
                              std::make_move_iterator(tuples.end()));
  }
  run.dataset.validate();
  return run;
}

void save_preferences(const std::filesystem::path& path, std::span<const PreferenceTuple> tuples) {
  std::vector<json> rows(tuples.begin(), tuples.end());
  write_jsonl(path, rows);
}

Action parse_action_text(std::string_view text) {
  if (text.starts_with("search: ")) return Action::search(std::string(text.substr(8)));
  if (text.starts_with("answer: ")) return Action::answer(std::string(text.substr(8)));
  throw Error(ErrorKind::invalid_input, "action text must start with 'search: ' or 'answer: '", std::string(text));
}

std::vector<PreferenceTuple> load_preferences(const std::filesystem::path& path) {
  std::vector<PreferenceTuple> out;
  std::size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    try {
      if (row.contains("schema")) {
        if (row.at("schema") != "raggym.preference.v1") {
          throw Error(ErrorKind::invalid_input, fmt::format("row {}: unsupported schema", line), path.string());
        }
        out.push_back(row.get<PreferenceTuple>());
        continue;
      }
      PreferenceTuple t;
      t.state_text = row.at("state_text").get<std::string>();
      t.preferred = parse_action_text(row.at("action_plus").get<std::string>());
      t.rejected = parse_action_text(row.at("action_minus").get<std::string>());
      if (t.preferred == t.rejected) {
        throw Error(ErrorKind::invalid_input, fmt::format("row {}: identical actions", line), path.string());
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_input, fmt::format("row {}: {}", line, e.what()), path.string());
    }
  }
  return out;
}

std::string_view to_string(ExportFormat f) {
  switch (f) {
    case ExportFormat::sft: return "sft";
    case ExportFormat::dpo: return "dpo";
    case ExportFormat::rm: return "rm";
  }
  return "sft";
}

ExportFormat parse_export_format(std::string_view s) {
  if (s == "sft") return ExportFormat::sft;
  if (s == "dpo") return ExportFormat::dpo;
  if (s == "rm") return ExportFormat::rm;
  throw Error(ErrorKind::config, "unknown export format '" + std::string(s) + "'");
}

namespace {

std::string completion_or_text(const std::string& raw, const Action& a) { return raw.empty() ? action_text(a) : raw; }

std::vector<std::string> export_fields(ExportFormat f) {
  switch (f) {
    case ExportFormat::sft: return {"completion", "prompt"};
    case ExportFormat::dpo: return {"chosen", "prompt", "rejected"};
    case ExportFormat::rm: return {"action_minus", "action_plus", "state_text"};
  }
  return {};
}

}  // namespace

std::vector<json> export_records(std::span<const PreferenceTuple> tuples, ExportFormat format) {
  std::vector<json> rows;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& t : tuples) {
    const std::string prompt = prompt_text(ChatRequest{t.prompt_system, t.prompt_user, {}});
    switch (format) {
      case ExportFormat::sft:
        if (!seen.emplace(dump_line(json(t.state)), action_text(t.preferred)).second) continue;
        rows.push_back({{"prompt", prompt}, {"completion", completion_or_text(t.preferred_raw, t.preferred)}});
        break;
      case ExportFormat::dpo:
        rows.push_back({{"prompt", prompt},
                        {"chosen", completion_or_text(t.preferred_raw, t.preferred)},
                        {"rejected", completion_or_text(t.rejected_raw, t.rejected)}});
        break;
      case ExportFormat::rm:
        rows.push_back({{"state_text", t.state_text},
                        {"action_plus", action_text(t.preferred)},
                        {"action_minus", action_text(t.rejected)}});
        break;
    }
  }
  return rows;
}

std::size_t export_dataset(const CollectedDataset& dataset, ExportFormat format, const std::filesystem::path& path,
                           bool force) {
  if (dataset.tuples.empty()) throw Error(ErrorKind::invalid_input, "nothing to export: the dataset is empty");
  if (std::filesystem::exists(path) && !force) {
    throw Error(ErrorKind::io, "export target exists (use --force to overwrite)", path.string());
  }
  const auto rows = export_records(dataset.tuples, format);
  write_jsonl(path, rows);
  return rows.size();
}

std::vector<json> load_export(const std::filesystem::path& path, ExportFormat format) {
  const auto fields = export_fields(format);
  auto rows = read_jsonl(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> keys;
    for (const auto& [k, v] : rows[i].items()) {
      if (!v.is_string()) throw Error(ErrorKind::invalid_input, fmt::format("row {}: field {} is not a string", i + 1, k));
      keys.push_back(k);
    }
    if (keys != fields) {
      throw Error(ErrorKind::invalid_input,
                  fmt::format("row {}: expected fields {} for {}", i + 1, fmt::join(fields, ","), to_string(format)),
                  path.string());
    }
  }
  return rows;
}

}  // namespace raggym
