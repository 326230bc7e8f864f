// SPDX-License-Identifier: Apache-2.0
#include "raggym/mdp.hpp"

#include <set>

#include "raggym/error.hpp"
#include "raggym/metrics.hpp"

namespace raggym {

void Question::validate() const {
  if (trim(text).empty()) throw Error(ErrorKind::invalid_input, "question text is empty", id);
  if (task_kind == TaskKind::multiple_choice) {
    if (choices.empty()) throw Error(ErrorKind::invalid_input, "multiple-choice question has no choices", id);
    std::set<std::string> labels;
    for (const auto& c : choices) {
      if (!labels.insert(c.label).second) {
        throw Error(ErrorKind::invalid_input, "duplicate choice label '" + c.label + "'", id);
      }
    }
  }
  if (gold && gold->empty()) throw Error(ErrorKind::invalid_input, "gold answer is empty", id);
}

std::string action_text(const Action& action) {
  return (action.is_search() ? "search: " : "answer: ") + action.payload;
}

void Trajectory::validate() const {
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& step = steps[k];
    const int expected = static_cast<int>(k) + 1;
    if (step.state_snapshot.step_index != expected) {
      throw Error(ErrorKind::invalid_input, "step " + std::to_string(expected) + " has step_index " +
                                                std::to_string(step.state_snapshot.step_index));
    }
    if (step.state_snapshot.history.size() != k) {
      throw Error(ErrorKind::invalid_input, "step " + std::to_string(expected) + " history length mismatch");
    }
    if (step.chosen_index < 0 || step.chosen_index >= static_cast<int>(step.candidates.size())) {
      throw Error(ErrorKind::invalid_input, "chosen_index out of bounds at step " + std::to_string(expected));
    }
    if (step.ranking) {
      std::vector<bool> seen(step.candidates.size(), false);
      if (step.ranking->size() != step.candidates.size()) {
        throw Error(ErrorKind::invalid_input, "ranking is not a permutation at step " + std::to_string(expected));
      }
      for (int i : *step.ranking) {
        if (i < 0 || i >= static_cast<int>(seen.size()) || seen[i]) {
          throw Error(ErrorKind::invalid_input, "ranking is not a permutation at step " + std::to_string(expected));
        }
        seen[i] = true;
      }
    }
    const bool answered = !step.candidates[step.chosen_index].is_search();
    if (answered && k + 1 != steps.size()) {
      throw Error(ErrorKind::invalid_input, "answer action before the last step");
    }
    if (k > 0) {
      const auto& prev = steps[k - 1].state_snapshot.history;
      const auto& cur = step.state_snapshot.history;
      if (!std::equal(prev.begin(), prev.end(), cur.begin())) {
        throw Error(ErrorKind::invalid_input, "history is not append-only at step " + std::to_string(expected));
      }
    }
  }
  if (final_answer.has_value() != outcome_reward.has_value() && question.gold) {
    throw Error(ErrorKind::invalid_input, "outcome_reward present iff final_answer present");
  }
  if (outcome_reward && *outcome_reward != 0 && *outcome_reward != 1) {
    throw Error(ErrorKind::invalid_input, "outcome_reward must be 0 or 1");
  }
}

State initial_state(const Question& question) {
  if (trim(question.text).empty()) {
    throw Error(ErrorKind::invalid_input, "question text is empty", question.id);
  }
  return State{question, {}, 1};
}

TransitionResult transition(const State& state, const Action& action, const RetrieveFn& retrieve) {
  if (!action.is_search()) return Terminal{action.payload};
  const std::string query = trim(action.payload);
  if (query.empty()) throw Error(ErrorKind::invalid_action, "search action with empty query");
  std::vector<Document> documents;
  try {
    documents = retrieve(query);
  } catch (const Error& e) {
    throw Error(ErrorKind::environment, std::string("retrieval failed: ") + e.what(), query);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::environment, std::string("retrieval failed: ") + e.what(), query);
  }
  State next = state;
  next.history.push_back(RetrievalRecord{query, std::move(documents), std::nullopt});
  next.step_index = state.step_index + 1;
  return NextState{std::move(next)};
}

int outcome_reward(std::string_view final_answer, const Question& question) {
  if (!question.gold) throw Error(ErrorKind::unscorable, "question has no gold answer", question.id);
  if (question.task_kind == TaskKind::multiple_choice) {
    return accuracy(extract_choice_label(final_answer, question.choices), *question.gold);
  }
  return em(final_answer, *question.gold);
}

namespace {

std::string_view task_kind_name(TaskKind k) { return k == TaskKind::open_qa ? "open_qa" : "multiple_choice"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "open_qa") return TaskKind::open_qa;
  if (s == "multiple_choice") return TaskKind::multiple_choice;
  throw Error(ErrorKind::invalid_input, "unknown task_kind '" + s + "'");
}

template <class T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
  else j[key] = nullptr;
}

template <class T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
  else out.reset();
}

}  // namespace

void to_json(json& j, const Question& q) {
  j = json{{"id", q.id}, {"text", q.text}, {"task_kind", task_kind_name(q.task_kind)}};
  json choices = json::array();
  for (const auto& c : q.choices) choices.push_back({{"label", c.label}, {"text", c.text}});
  j["choices"] = choices;
  put_optional(j, "gold", q.gold);
}

void from_json(const json& j, Question& q) {
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.task_kind = parse_task_kind(j.value("task_kind", std::string("open_qa")));
  q.choices.clear();
  if (j.contains("choices") && !j.at("choices").is_null()) {
    for (const auto& c : j.at("choices")) q.choices.push_back({c.at("label").get<std::string>(), c.at("text").get<std::string>()});
  }
  get_optional(j, "gold", q.gold);
}

void to_json(json& j, const Document& d) {
  j = json{{"doc_id", d.doc_id}, {"title", d.title}, {"text", d.text}, {"score", d.score}};
}

void from_json(const json& j, Document& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.title = j.value("title", std::string());
  d.text = j.at("text").get<std::string>();
  d.score = j.value("score", 0.0);
}

void to_json(json& j, const RetrievalRecord& r) {
  j = json{{"query", r.query}, {"documents", r.documents}};
  put_optional(j, "summary", r.summary);
}

void from_json(const json& j, RetrievalRecord& r) {
  r.query = j.at("query").get<std::string>();
  r.documents = j.at("documents").get<std::vector<Document>>();
  get_optional(j, "summary", r.summary);
}

void to_json(json& j, const State& s) {
  j = json{{"question", s.question}, {"history", s.history}, {"step_index", s.step_index}};
}

void from_json(const json& j, State& s) {
  s.question = j.at("question").get<Question>();
  s.history = j.at("history").get<std::vector<RetrievalRecord>>();
  s.step_index = j.at("step_index").get<int>();
}

void to_json(json& j, const Action& a) {
  j = json{{"kind", a.is_search() ? "search" : "answer"}, {"payload", a.payload}};
}

void from_json(const json& j, Action& a) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "search" && kind != "answer") throw Error(ErrorKind::invalid_input, "unknown action kind '" + kind + "'");
  a.kind = kind == "search" ? ActionKind::search : ActionKind::answer;
  a.payload = j.at("payload").get<std::string>();
}

void to_json(json& j, const StepRecord& s) {
  j = json{{"state_snapshot", s.state_snapshot},
           {"candidates", s.candidates},
           {"multiplicity", s.multiplicity},
           {"raw_completions", s.raw_completions},
           {"chosen_index", s.chosen_index},
           {"forced", s.forced}};
  put_optional(j, "annotation", s.ranking);
  put_optional(j, "scores", s.scores);
}

void from_json(const json& j, StepRecord& s) {
  s.state_snapshot = j.at("state_snapshot").get<State>();
  s.candidates = j.at("candidates").get<std::vector<Action>>();
  s.multiplicity = j.value("multiplicity", std::vector<int>(s.candidates.size(), 1));
  s.raw_completions = j.value("raw_completions", std::vector<std::string>{});
  s.chosen_index = j.at("chosen_index").get<int>();
  s.forced = j.value("forced", false);
  get_optional(j, "annotation", s.ranking);
  get_optional(j, "scores", s.scores);
}

void to_json(json& j, const Trajectory& t) {
  j = json{{"schema", kTrajectorySchema}, {"question", t.question}, {"steps", t.steps},
           {"seed", t.seed},              {"run_id", t.run_id}};
  put_optional(j, "final_answer", t.final_answer);
  put_optional(j, "outcome_reward", t.outcome_reward);
}

void from_json(const json& j, Trajectory& t) {
  if (j.value("schema", std::string()) != kTrajectorySchema) {
    throw Error(ErrorKind::invalid_input, "unsupported trajectory schema", j.value("schema", std::string()));
  }
  t.question = j.at("question").get<Question>();
  t.steps = j.at("steps").get<std::vector<StepRecord>>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.run_id = j.at("run_id").get<std::string>();
  get_optional(j, "final_answer", t.final_answer);
  get_optional(j, "outcome_reward", t.outcome_reward);
}

std::vector<Question> load_questions(const std::filesystem::path& path) {
  std::vector<Question> out;
  std::set<std::string> ids;
  for (const auto& row : read_jsonl(path)) {
    Question q;
    try {
      q = row.get<Question>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_input, std::string("malformed question record: ") + e.what(), path.string());
    }
    q.validate();
    if (!ids.insert(q.id).second) throw Error(ErrorKind::invalid_input, "duplicate question id", q.id);
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace raggym
