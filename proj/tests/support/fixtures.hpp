// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "raggym/agents.hpp"
#include "raggym/critic.hpp"
#include "raggym/llm.hpp"
#include "raggym/mdp.hpp"
#include "raggym/retrieval.hpp"

// Scripted 2-hop world shared by the tests. Question i asks for the
// spouse of the director of film Filmo<code>; the corpus holds one
// document per hop plus filler. Everything is deterministic.
namespace raggym::fixtures {

/// Two or more lowercase letters, distinct per index.
std::string code_for(int i);

struct GoldPath {
  std::string q1;      // finds the director
  std::string q2;      // finds the spouse
  std::string answer;  // the spouse
};
GoldPath gold_path(std::string_view code);

/// Code of the first "Filmo<code>" token in `text`.
std::optional<std::string> find_code(std::string_view text);

/// Next correct action given everything visible in `text` (a prompt or a
/// critic state text): q1, then q2 once the director is known, then the
/// answer once the spouse is known.
Action gold_action(std::string_view text);
bool knows_spouse(std::string_view text, std::string_view code);

struct TwoHopWorld {
  std::vector<CorpusDocument> corpus;
  std::vector<Question> questions;
  std::shared_ptr<const LexicalIndex> index;
  std::shared_ptr<const RetrievalEnv> env;
  RetrieveFn retrieve;
};

TwoHopWorld make_world(int n_questions, int top_k = 3);

/// Re2Search-formatted completion for `action`.
std::string re2search_completion(const Action& action);
extern const Action kWrongAnswer;
extern const Action kIrrelevantSearch;

enum class ActorMode {
  scripted,    // always the gold action
  menu,        // sample 0 wrong answer, sample 1 irrelevant search, samples >= 2 gold
  stochastic,  // each sample a distractor with probability p, drawn from the request seed
  never_answer // keeps searching; answers only once searching is disabled
};

/// Actor, summarizer (echoes the top document) and annotator (gold action
/// first, others in index order) for the 2-hop world.
std::shared_ptr<Backend> make_backend(ActorMode mode, double distractor_p = 0.5);
Gateway make_gateway(ActorMode mode, double distractor_p = 0.5);

/// +1 for q1, q2 and the gold answer of the state's question, 0 otherwise.
class OracleCritic final : public Critic {
 public:
  double score(std::string_view state_text, const Action& action) const override;
};

Agent re2search_agent();

/// Writes corpus.jsonl, dataset.jsonl, mock.jsonl and config.json for the
/// command line into `dir`. The mock actor proposes the gold action and a
/// wrong answer; the mock annotator prefers the gold action.
void write_cli_fixture(const std::filesystem::path& dir, int n_questions);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(std::string_view name);

}  // namespace raggym::fixtures
