// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "raggym/llm.hpp"
#include "raggym/mdp.hpp"

namespace raggym {

enum class ArchName { direct, cot, rag, react, search_o1, re2search };

std::string_view to_string(ArchName name);
ArchName parse_arch(std::string_view name);
inline constexpr std::array<ArchName, 6> kAllArchitectures = {
    ArchName::direct, ArchName::cot, ArchName::rag, ArchName::react, ArchName::search_o1, ArchName::re2search};

struct Components {
  bool answer_generation = true;
  bool question_reasoning = false;
  bool retrieval_augmentation = false;
  bool query_generation = false;
  bool document_summarization = false;
  bool reasoning_reflection = false;
  bool operator==(const Components&) const = default;
};

struct AgentArchitecture {
  ArchName name;
  Components components;

  static AgentArchitecture of(ArchName name);
};

/// Templates use {{placeholder}} syntax. Per architecture there is a
/// system prompt, the normal user prompt and an answer-only variant used
/// once searching is disabled.
struct ArchTemplates {
  std::string system;
  std::string user;
  std::string user_forced;
};

struct PromptBundle {
  std::map<ArchName, ArchTemplates> architectures;
  std::string summarize;  // {{documents}} {{question}} {{query}}
  std::string rank;       // {{question}} {{curr_history}} {{actions_text}}

  static PromptBundle defaults();
  /// Defaults overridden by any of <arch>.system.txt, <arch>.user.txt,
  /// <arch>.user_forced.txt, summarize.txt and rank.txt found in `dir`.
  static PromptBundle load(const std::filesystem::path& dir);
};

/// Substitutes every {{name}} in `tmpl`. Throws invalid_input when the
/// template names a placeholder that has no value.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

struct ParsedAction {
  Action action;
  std::optional<std::string> predicted_answer;
  std::string reasoning_text;
  std::string raw;
  std::optional<std::string> parse_error;  // set when the fail-soft fallback was used
  int repairs = 0;
};

struct AgentOptions {
  std::size_t doc_char_budget = 1500;
  int max_repairs = 2;
  int max_tokens = 1024;
};

struct ProposalConfig {
  int n = 1;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  bool force_answer = false;
};

/// One architecture bound to its prompts.
class Agent {
 public:
  Agent(ArchName arch, std::shared_ptr<const PromptBundle> prompts, AgentOptions options = {});

  const AgentArchitecture& architecture() const { return arch_; }
  const PromptBundle& prompts() const { return *prompts_; }
  const AgentOptions& options() const { return options_; }

  std::string render_question(const Question& q) const;
  /// History block as this architecture shows it to the model: query and
  /// summary pairs with document summarization, raw titles and truncated
  /// texts otherwise.
  std::string render_history(const State& state) const;
  /// The text a critic sees for a state: question plus rendered history.
  std::string state_text(const State& state) const;

  /// The actor prompt (generation settings left at defaults).
  ChatRequest render_prompt(const State& state, bool force_answer = false) const;

  /// Parses one completion without repair. Sets parse_error on failure and
  /// fills `action` with the best-effort fallback answer.
  ParsedAction parse_action(std::string_view completion, bool force_answer = false) const;

  /// Renders once, samples `n` completions and parses each; malformed
  /// completions get up to max_repairs re-prompts before the fail-soft
  /// fallback.
  std::vector<ParsedAction> propose_actions(Gateway& gateway, const State& state, const ProposalConfig& config) const;

  std::string summarize_record(Gateway& gateway, const Question& question, std::string_view query,
                               const std::vector<Document>& docs) const;

  /// transition() plus, for summarizing architectures, the cached summary
  /// of the new record.
  TransitionResult advance(Gateway& gateway, const State& state, const Action& action, const RetrieveFn& retrieve) const;

  /// True when this architecture may still emit a search from `state`.
  bool can_search(const State& state) const;

 private:
  std::string render_documents(const std::vector<Document>& docs) const;

  AgentArchitecture arch_;
  std::shared_ptr<const PromptBundle> prompts_;
  AgentOptions options_;
};

/// Distinct proposals in first-seen order, keyed by action_text().
struct CandidateSet {
  std::vector<Action> actions;
  std::vector<int> multiplicity;
  std::vector<std::string> raw_completions;  // first raw text per action
};

CandidateSet dedupe_candidates(const std::vector<ParsedAction>& proposals);

/// Locates the last JSON object in a completion: the last ```json fenced
/// block if any, else the last balanced {...}. Tolerates trailing commas.
std::optional<json> extract_last_json_object(std::string_view text);

}  // namespace raggym
