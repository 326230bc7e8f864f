// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "raggym/agents.hpp"
#include "raggym/critic.hpp"
#include "raggym/inference.hpp"

/// Process-reward data collection: candidate sampling, ranking annotation,
/// outcome filtering, preference pairs and training-file exports.
namespace raggym {

enum class AnnotatorKind { llm, rollout, human_file };
std::string_view to_string(AnnotatorKind k);
AnnotatorKind parse_annotator_kind(std::string_view s);  // accepts "human-file" too
PreferenceSource source_of(AnnotatorKind k);

struct RolloutLog {
  int candidate = 0;
  int rollout = 0;
  std::optional<std::string> final_answer;
  int outcome = 0;
  int n_search_queries = 0;
  bool operator==(const RolloutLog&) const = default;
};

void to_json(json& j, const RolloutLog& r);
void from_json(const json& j, RolloutLog& r);

struct RankingAnnotation {
  std::vector<int> ranked_indices;  // most to least appropriate
  AnnotatorKind annotator = AnnotatorKind::llm;
  std::string raw;
  std::optional<std::vector<double>> scores;  // rollout success fractions
  std::vector<RolloutLog> rollouts;
};

/// Throws annotation error unless `ranked` is a bijection on {0..n-1}.
void validate_permutation(const std::vector<int>& ranked, std::size_t n);

/// Descending score, ties by ascending index.
std::vector<int> ranking_from_scores(std::span<const double> scores);

/// Success fraction per candidate recounted from rollout logs.
std::vector<double> rollout_scores(std::span<const RolloutLog> logs, std::size_t n_candidates);

/// Numbered list of candidate actions as the ranking prompt shows them.
std::string render_actions(std::span<const Action> candidates);
ChatRequest render_rank_prompt(const Agent& agent, const State& state, std::span<const Action> candidates);

RankingAnnotation rank_with_llm(Gateway& gateway, const Agent& agent, const State& state,
                                std::span<const Action> candidates, int max_retries = 2, std::uint64_t seed = 0);

struct RolloutConfig {
  int m = 4;
  int max_steps = 10;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

/// Executes each candidate and completes m rollouts from the resulting
/// state; score = fraction of rollouts with outcome 1.
RankingAnnotation rank_by_rollout(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                  const State& state, std::span<const Action> candidates, const RolloutConfig& config);

struct AnnotationContext {
  const Agent& agent;
  Gateway& gateway;
  const RetrieveFn& retrieve;
  std::uint64_t seed;
  int max_steps;
};

class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual AnnotatorKind kind() const = 0;
  /// Called with at least two distinct candidates.
  virtual RankingAnnotation annotate(const AnnotationContext& ctx, const State& state,
                                     const std::vector<Action>& candidates) const = 0;
};

class LlmAnnotator final : public Annotator {
 public:
  explicit LlmAnnotator(int max_retries = 2) : max_retries_(max_retries) {}
  AnnotatorKind kind() const override { return AnnotatorKind::llm; }
  RankingAnnotation annotate(const AnnotationContext& ctx, const State& state,
                             const std::vector<Action>& candidates) const override;

 private:
  int max_retries_;
};

class RolloutAnnotator final : public Annotator {
 public:
  RolloutAnnotator(int m, double temperature);
  AnnotatorKind kind() const override { return AnnotatorKind::rollout; }
  RankingAnnotation annotate(const AnnotationContext& ctx, const State& state,
                             const std::vector<Action>& candidates) const override;

 private:
  int m_;
  double temperature_;
};

/// Offline rankings from JSONL rows {question_id, step_index,
/// ranked_indices, candidates?}. When `candidates` (action texts) is
/// present it must match the proposals being ranked.
class HumanFileAnnotator final : public Annotator {
 public:
  struct Row {
    std::vector<int> ranked_indices;
    std::optional<std::vector<std::string>> candidates;
  };

  explicit HumanFileAnnotator(const std::filesystem::path& path);
  AnnotatorKind kind() const override { return AnnotatorKind::human_file; }
  RankingAnnotation annotate(const AnnotationContext& ctx, const State& state,
                             const std::vector<Action>& candidates) const override;

 private:
  std::map<std::pair<std::string, int>, Row> rows_;
};

enum class Pairing { top_vs_rest, top_vs_last };
std::string_view to_string(Pairing p);
Pairing parse_pairing(std::string_view s);

struct CollectionConfig {
  int n_candidates = 10;
  int max_steps = 10;
  double temperature = 1.0;
  Pairing pairing = Pairing::top_vs_rest;

  void validate() const;
  bool operator==(const CollectionConfig&) const = default;
};

struct CollectionResult {
  Trajectory trajectory;
  bool usable = true;
  std::optional<std::string> error;
  std::vector<RankingAnnotation> annotations;  // one per step
};

/// Samples n_candidates per step, dedupes them, annotates and executes the
/// rank-1 action until an answer or max_steps (forced answer at the cap).
CollectionResult collect_trajectory(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                                    const Annotator& annotator, const Question& question,
                                    const CollectionConfig& config, std::uint64_t seed);

struct FilterStats {
  std::size_t sampled = 0;
  std::size_t retained = 0;
  std::size_t dropped = 0;
  bool operator==(const FilterStats&) const = default;
};

struct FilterResult {
  std::vector<Trajectory> retained;
  FilterStats stats;
};

/// Keeps trajectories with outcome_reward = 1; unscored ones are an error.
FilterResult filter_by_outcome(std::span<const Trajectory> trajectories);

/// Pairs per step with at least two distinct candidates. The trajectory
/// must carry outcome_reward = 1. Prompts are re-rendered with `agent`.
std::vector<PreferenceTuple> build_preference_pairs(const Trajectory& trajectory, const Agent& agent, Pairing pairing,
                                                    PreferenceSource source);

struct CollectedDataset {
  std::vector<PreferenceTuple> tuples;
  std::string provenance;  // run id of the producing run
  FilterStats filter_stats;

  void validate() const;
};

struct CollectionRun {
  std::vector<CollectionResult> results;  // per question, input order
  CollectedDataset dataset;
  std::size_t unusable = 0;
};

CollectionRun run_collection(const Agent& agent, Gateway& gateway, const RetrieveFn& retrieve,
                             const Annotator& annotator, std::span<const Question> questions,
                             const CollectionConfig& config, std::uint64_t root_seed, const std::string& run_id,
                             int jobs = 1);

/// One preference tuple per line, full fidelity.
void save_preferences(const std::filesystem::path& path, std::span<const PreferenceTuple> tuples);
/// Reads preference tuples, or rm export rows {state_text, action_plus,
/// action_minus}, which are converted.
std::vector<PreferenceTuple> load_preferences(const std::filesystem::path& path);

/// "system\n\nuser", or just the user message when there is no system part.
std::string prompt_text(const ChatRequest& request);

enum class ExportFormat { sft, dpo, rm };
std::string_view to_string(ExportFormat f);
ExportFormat parse_export_format(std::string_view s);

/// sft: {prompt, completion} per distinct (state, a+); dpo: {prompt,
/// chosen, rejected}; rm: {state_text, action_plus, action_minus}.
std::vector<json> export_records(std::span<const PreferenceTuple> tuples, ExportFormat format);
/// Writes the export and returns its line count. Refuses to overwrite an
/// existing file unless `force`.
std::size_t export_dataset(const CollectedDataset& dataset, ExportFormat format, const std::filesystem::path& path,
                           bool force = false);
/// Loads an export, checking each row has exactly the format's fields.
std::vector<json> load_export(const std::filesystem::path& path, ExportFormat format);

/// Parses "search: q" / "answer: a" back into an action.
Action parse_action_text(std::string_view text);

}  // namespace raggym
