// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "raggym/util.hpp"

/// The high-level MDP: a state is the question plus the ordered
/// query→documents history; an action is a search query or a final answer.
namespace raggym {

enum class TaskKind { open_qa, multiple_choice };

struct Choice {
  std::string label;
  std::string text;
  bool operator==(const Choice&) const = default;
};

struct Question {
  std::string id;
  std::string text;
  TaskKind task_kind = TaskKind::open_qa;
  std::vector<Choice> choices;
  std::optional<std::string> gold;  // never shown to agents

  /// Throws invalid_input when the invariants do not hold.
  void validate() const;
  bool operator==(const Question&) const = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string text;
  double score = 0.0;
  bool operator==(const Document&) const = default;
};

struct RetrievalRecord {
  std::string query;
  std::vector<Document> documents;  // fused ranking order
  std::optional<std::string> summary;
  bool operator==(const RetrievalRecord&) const = default;
};

struct State {
  Question question;
  std::vector<RetrievalRecord> history;
  int step_index = 1;
  bool operator==(const State&) const = default;
};

enum class ActionKind { search, answer };

struct Action {
  ActionKind kind = ActionKind::answer;
  std::string payload;

  static Action search(std::string query) { return {ActionKind::search, std::move(query)}; }
  static Action answer(std::string text) { return {ActionKind::answer, std::move(text)}; }
  bool is_search() const { return kind == ActionKind::search; }
  bool operator==(const Action&) const = default;
};

/// "search: <query>" / "answer: <text>"; the canonical action text used
/// for deduplication, critic features and exports.
std::string action_text(const Action& action);

struct StepRecord {
  State state_snapshot;
  std::vector<Action> candidates;              // distinct proposals
  std::vector<int> multiplicity;               // raw samples per candidate
  std::vector<std::string> raw_completions;    // first raw text per candidate
  std::optional<std::vector<int>> ranking;     // permutation, best first
  std::optional<std::vector<double>> scores;   // critic or rollout scores
  int chosen_index = 0;
  bool forced = false;                         // proposed with searching disabled
  bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
  Question question;
  std::vector<StepRecord> steps;
  std::optional<std::string> final_answer;
  std::optional<int> outcome_reward;
  std::uint64_t seed = 0;
  std::string run_id;

  /// Throws invalid_input describing the first violated invariant.
  void validate() const;
  bool operator==(const Trajectory&) const = default;
};

struct NextState {
  State state;
};
struct Terminal {
  std::string answer;
};
using TransitionResult = std::variant<NextState, Terminal>;

using RetrieveFn = std::function<std::vector<Document>(std::string_view query)>;

State initial_state(const Question& question);

/// Pure: the input state is never modified. Retrieval failures are
/// rethrown as environment errors carrying the query.
TransitionResult transition(const State& state, const Action& action, const RetrieveFn& retrieve);

/// 1 when the answer is correct. Open QA uses normalized exact match;
/// multiple choice compares normalized labels.
int outcome_reward(std::string_view final_answer, const Question& question);

void to_json(json& j, const Question& q);
void from_json(const json& j, Question& q);
void to_json(json& j, const Document& d);
void from_json(const json& j, Document& d);
void to_json(json& j, const RetrievalRecord& r);
void from_json(const json& j, RetrievalRecord& r);
void to_json(json& j, const State& s);
void from_json(const json& j, State& s);
void to_json(json& j, const Action& a);
void from_json(const json& j, Action& a);
void to_json(json& j, const StepRecord& s);
void from_json(const json& j, StepRecord& s);
void to_json(json& j, const Trajectory& t);
void from_json(const json& j, Trajectory& t);

inline constexpr std::string_view kTrajectorySchema = "raggym.trajectory.v1";

std::vector<Question> load_questions(const std::filesystem::path& path);

}  // namespace raggym
