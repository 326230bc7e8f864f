// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>

#include "fixtures.hpp"
#include "raggym/agents.hpp"
#include "raggym/error.hpp"
#include "raggym/util.hpp"

using namespace raggym;

namespace {

std::shared_ptr<const PromptBundle> bundle() { return std::make_shared<const PromptBundle>(PromptBundle::defaults()); }

Question question() {
  Question q;
  q.id = "q";
  q.text = "Who is the spouse of the director of Filmoaa?";
  q.gold = "Spousaaa";
  return q;
}

State with_record(const State& s, std::string query, std::optional<std::string> summary) {
  State n = s;
  n.history.push_back({std::move(query), {Document{"d1", "Doc One", "Body of doc one.", 1.0}}, std::move(summary)});
  n.step_index += 1;
  return n;
}

struct CountingBackend {
  std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
  std::shared_ptr<Backend> reply_with(std::vector<std::string> replies) {
    auto c = calls;
    return std::make_shared<FunctionBackend>([c, replies](Role, const ChatRequest& r) {
      std::vector<std::string> out;
      for (int i = 0; i < r.generation.n_samples; ++i) {
        out.push_back(replies[static_cast<std::size_t>(c->load()) % replies.size()]);
      }
      c->fetch_add(1);
      return out;
    });
  }
};

}  // namespace

TEST(Architecture, ComponentRowsPerArchitecture) {
  // answer, reasoning, retrieval, query, summarization, reflection
  const std::map<ArchName, std::array<bool, 6>> rows{
      {ArchName::direct, {true, false, false, false, false, false}},
      {ArchName::cot, {true, true, false, false, false, false}},
      {ArchName::rag, {true, true, true, false, false, false}},
      {ArchName::react, {true, true, true, true, false, false}},
      {ArchName::search_o1, {true, true, true, true, true, false}},
      {ArchName::re2search, {true, true, true, true, true, true}},
  };
  for (const auto& [name, row] : rows) {
    const auto c = AgentArchitecture::of(name).components;
    EXPECT_EQ(c.answer_generation, row[0]) << to_string(name);
    EXPECT_EQ(c.question_reasoning, row[1]) << to_string(name);
    EXPECT_EQ(c.retrieval_augmentation, row[2]) << to_string(name);
    EXPECT_EQ(c.query_generation, row[3]) << to_string(name);
    EXPECT_EQ(c.document_summarization, row[4]) << to_string(name);
    EXPECT_EQ(c.reasoning_reflection, row[5]) << to_string(name);
  }
}

TEST(Architecture, NameRoundTrip) {
  for (auto a : kAllArchitectures) EXPECT_EQ(parse_arch(to_string(a)), a);
  EXPECT_THROW(parse_arch("mystery"), Error);
}

TEST(RenderPrompt, Re2SearchHasThreeSections) {
  const Agent agent(ArchName::re2search, bundle());
  const auto r = agent.render_prompt(initial_state(question()));
  EXPECT_NE(r.user.find("Step-by-step Reasoning"), std::string::npos);
  EXPECT_NE(r.user.find("Unverified Claim Identification"), std::string::npos);
  EXPECT_NE(r.user.find("Structured Output"), std::string::npos);
  EXPECT_NE(r.user.find(question().text), std::string::npos);
  EXPECT_EQ(r.user.find("{{"), std::string::npos);
}

TEST(RenderPrompt, ForcedVariantDropsQueryField) {
  const Agent agent(ArchName::re2search, bundle());
  const auto r = agent.render_prompt(initial_state(question()), true);
  EXPECT_EQ(r.user.find("generated_query"), std::string::npos);
  EXPECT_NE(r.user.find("predicted_answer"), std::string::npos);
}

TEST(RenderPrompt, SummarizingHistoryIsQueryAnswerPairs) {
  const Agent agent(ArchName::search_o1, bundle());
  const State s = with_record(initial_state(question()), "Who directed Filmoaa?", "Direxaa directed it.");
  const auto r = agent.render_prompt(s);
  EXPECT_NE(r.user.find("Query: Who directed Filmoaa?\nAnswer: Direxaa directed it."), std::string::npos);
  EXPECT_EQ(r.user.find("Body of doc one."), std::string::npos);
}

TEST(RenderPrompt, NonSummarizingHistoryShowsDocuments) {
  Agent agent(ArchName::react, bundle(), AgentOptions{10, 2, 1024});
  const State s = with_record(initial_state(question()), "q", "ignored summary");
  const auto r = agent.render_prompt(s);
  EXPECT_NE(r.user.find("Title: Doc One"), std::string::npos);
  EXPECT_NE(r.user.find("Body of do..."), std::string::npos);  // 10-char budget
  EXPECT_EQ(r.user.find("ignored summary"), std::string::npos);
}

TEST(RenderPrompt, DirectHasNoHistoryOrReasoning) {
  const Agent agent(ArchName::direct, bundle());
  const auto r = agent.render_prompt(with_record(initial_state(question()), "q", std::nullopt));
  EXPECT_EQ(r.user.find("History"), std::string::npos);
  EXPECT_EQ(r.user.find("Reasoning"), std::string::npos);
  EXPECT_NE(r.user.find(question().text), std::string::npos);
  const Agent cot(ArchName::cot, bundle());
  EXPECT_EQ(cot.render_prompt(initial_state(question())).user.find("History"), std::string::npos);
}

TEST(RenderPrompt, MultipleChoiceListsChoices) {
  Question q = question();
  q.task_kind = TaskKind::multiple_choice;
  q.choices = {{"A", "Aspirin"}, {"B", "Ibuprofen"}};
  q.gold = "A";
  const Agent agent(ArchName::cot, bundle());
  EXPECT_NE(agent.render_prompt(initial_state(q)).user.find("A. Aspirin\nB. Ibuprofen"), std::string::npos);
}

TEST(RenderTemplate, MissingPlaceholderThrows) {
  EXPECT_EQ(render_template("x {{a}} y", {{"a", "1"}}), "x 1 y");
  EXPECT_THROW(render_template("{{missing}}", {}), Error);
}

TEST(PromptBundle, DirectoryOverrides) {
  const auto dir = fixtures::temp_dir("prompts");
  write_file(dir / "direct.user.txt", "Q: {{question}}");
  const auto b = PromptBundle::load(dir);
  EXPECT_EQ(b.architectures.at(ArchName::direct).user, "Q: {{question}}");
  EXPECT_EQ(b.architectures.at(ArchName::cot).user, PromptBundle::defaults().architectures.at(ArchName::cot).user);
  EXPECT_THROW(PromptBundle::load(dir / "missing"), Error);
}

TEST(ParseAction, NoneQueryIsAnswer) {
  const Agent agent(ArchName::re2search, bundle());
  const auto p = agent.parse_action(R"(reasoning
```json
{"predicted_answer": "X", "generated_query": "None"}
```)");
  EXPECT_FALSE(p.parse_error);
  EXPECT_EQ(p.action, Action::answer("X"));
  EXPECT_EQ(agent.parse_action(R"({"predicted_answer": "X", "generated_query": "  none "})").action, Action::answer("X"));
}

TEST(ParseAction, QueryIsSearch) {
  const Agent agent(ArchName::re2search, bundle());
  const auto p = agent.parse_action(
      R"({"predicted_answer":"Mackenzie Bowell","generated_query":"Who is the last surviving Canadian father of Confederation?"})");
  EXPECT_EQ(p.action, Action::search("Who is the last surviving Canadian father of Confederation?"));
  EXPECT_EQ(p.predicted_answer, "Mackenzie Bowell");
}

TEST(ParseAction, EmptyPredictedAnswerWithNoneQueryAnswersEmpty) {
  const Agent agent(ArchName::re2search, bundle());
  const auto p = agent.parse_action(R"({"predicted_answer": "", "generated_query": "None"})");
  EXPECT_FALSE(p.parse_error);
  EXPECT_EQ(p.action, Action::answer(""));
}

TEST(ParseAction, LastFencedBlockWinsAndTrailingCommaTolerated) {
  const Agent agent(ArchName::search_o1, bundle());
  const auto p = agent.parse_action(
      "```json\n{\"predicted_answer\": \"old\", \"generated_query\": \"old q\"}\n```\nthen\n"
      "```json\n{\"predicted_answer\": \"new\", \"generated_query\": \"new q\",}\n```");
  EXPECT_EQ(p.action, Action::search("new q"));
}

TEST(ParseAction, ReactBrackets) {
  const Agent agent(ArchName::react, bundle());
  EXPECT_EQ(agent.parse_action("Thought: need more\nAction: Search[capital of France]").action,
            Action::search("capital of France"));
  const auto fin = agent.parse_action("Thought: done\nAction: Finish[Paris]");
  EXPECT_EQ(fin.action, Action::answer("Paris"));
  EXPECT_EQ(fin.reasoning_text, "done");
}

TEST(ParseAction, DirectNeedsOnlyAnswer) {
  const Agent agent(ArchName::direct, bundle());
  EXPECT_EQ(agent.parse_action(R"({"predicted_answer": "Paris"})").action, Action::answer("Paris"));
}

TEST(ParseAction, GarbageNeverThrowsProperty) {
  Rng rng(21);
  const std::string alphabet = "{}[]\":,`json \nabcSearchFinishNone_predicted_answergenerated_query";
  for (auto arch : kAllArchitectures) {
    const Agent agent(arch, bundle());
    for (int i = 0; i < 300; ++i) {
      std::string s;
      const auto len = rng.below(80);
      for (std::uint64_t k = 0; k < len; ++k) s.push_back(alphabet[rng.below(alphabet.size())]);
      ParsedAction p;
      ASSERT_NO_THROW(p = agent.parse_action(s));
      if (p.parse_error) {
        EXPECT_FALSE(p.action.is_search());
      }
    }
  }
}

TEST(ProposeActions, EmptyCompletionFailsSoftAfterRepairs) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway gw;
  CountingBackend cb;
  gw.bind(Role::actor, cb.reply_with({""}));
  const auto out = agent.propose_actions(gw, initial_state(question()), {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].parse_error);
  EXPECT_EQ(out[0].repairs, 2);
  EXPECT_FALSE(out[0].action.is_search());
  EXPECT_EQ(cb.calls->load(), 3);
  const auto log = gw.log().entries();
  EXPECT_NE(log.back().request.user.find("### Format Correction"), std::string::npos);
}

TEST(ProposeActions, RepairRecovers) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway gw;
  CountingBackend cb;
  gw.bind(Role::actor, cb.reply_with({"garbage", R"({"predicted_answer": "x", "generated_query": "q2"})"}));
  const auto out = agent.propose_actions(gw, initial_state(question()), {});
  EXPECT_FALSE(out[0].parse_error);
  EXPECT_EQ(out[0].repairs, 1);
  EXPECT_EQ(out[0].action, Action::search("q2"));
}

TEST(ProposeActions, RagFirstStepSearchesQuestionWithoutCall) {
  const Agent agent(ArchName::rag, bundle());
  Gateway gw;
  CountingBackend cb;
  gw.bind(Role::actor, cb.reply_with({R"({"predicted_answer": "x"})"}));
  const auto first = agent.propose_actions(gw, initial_state(question()), {});
  ASSERT_EQ(first.size(), 1u);
  EXPECT_EQ(first[0].action, Action::search(question().text));
  EXPECT_EQ(cb.calls->load(), 0);
  const auto second = agent.propose_actions(gw, with_record(initial_state(question()), question().text, std::nullopt), {});
  EXPECT_EQ(second[0].action, Action::answer("x"));
}

TEST(ProposeActions, NonQueryArchitecturesNeverSearch) {
  Gateway gw;
  CountingBackend cb;
  gw.bind(Role::actor, cb.reply_with({"Action: Search[foo]", R"({"predicted_answer": "a", "generated_query": "q"})"}));
  for (auto arch : {ArchName::direct, ArchName::cot, ArchName::rag}) {
    const Agent agent(arch, bundle());
    const State s = with_record(initial_state(question()), "q", std::nullopt);
    for (const auto& p : agent.propose_actions(gw, s, {4, 1.0, 3, false})) EXPECT_FALSE(p.action.is_search());
    if (arch != ArchName::rag) {
      for (const auto& p : agent.propose_actions(gw, initial_state(question()), {4, 1.0, 3, false})) {
        EXPECT_FALSE(p.action.is_search());
      }
    }
  }
}

TEST(ProposeActions, ReturnsNInOrder) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway gw;
  gw.bind(Role::actor, std::make_shared<FunctionBackend>([](Role, const ChatRequest& r) {
            std::vector<std::string> out;
            for (int i = 0; i < r.generation.n_samples; ++i) {
              out.push_back(fixtures::re2search_completion(Action::search("q" + std::to_string(i))));
            }
            return out;
          }));
  const auto out = agent.propose_actions(gw, initial_state(question()), {10, 1.0, 1, false});
  ASSERT_EQ(out.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)].action, Action::search("q" + std::to_string(i)));
  EXPECT_THROW(agent.propose_actions(gw, initial_state(question()), {2, 0.0, 1, false}), Error);
}

TEST(ProposeActions, GreedyIsDeterministic) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway a = fixtures::make_gateway(fixtures::ActorMode::scripted);
  Gateway b = fixtures::make_gateway(fixtures::ActorMode::scripted);
  const auto s = initial_state(question());
  EXPECT_EQ(agent.propose_actions(a, s, {}).front().action, agent.propose_actions(b, s, {}).front().action);
  EXPECT_EQ(agent.propose_actions(a, s, {}).front().action, Action::search("Who directed Filmoaa?"));
}

TEST(Summarize, StoredVerbatimFromSummarizerRole) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway gw;
  gw.bind(Role::summarizer, std::make_shared<FunctionBackend>([](Role role, const ChatRequest& r) {
            EXPECT_EQ(role, Role::summarizer);
            EXPECT_NE(r.user.find("### Follow-up Query\nq"), std::string::npos);
            return std::vector<std::string>{"The capital is Paris."};
          }));
  gw.bind(Role::actor, std::make_shared<FunctionBackend>([](Role, const ChatRequest&) -> std::vector<std::string> {
            throw Error(ErrorKind::gateway, "actor must not summarize");
          }));
  const auto r = agent.advance(gw, initial_state(question()), Action::search("q"),
                               [](std::string_view) { return std::vector<Document>{{"d", "t", "x", 1}}; });
  const auto& s = std::get<NextState>(r).state;
  EXPECT_EQ(s.history.back().summary, "The capital is Paris.");
}

TEST(Summarize, ActorSwapDoesNotChangeSummaries) {
  const Agent agent(ArchName::search_o1, bundle());
  const auto world = fixtures::make_world(3);
  auto run = [&](std::shared_ptr<Backend> actor) {
    Gateway gw;
    gw.bind(Role::actor, std::move(actor));
    gw.bind(Role::summarizer, fixtures::make_backend(fixtures::ActorMode::scripted));
    const auto r = agent.advance(gw, initial_state(world.questions[0]), Action::search("Who directed Filmoaa?"),
                                 world.retrieve);
    return std::get<NextState>(r).state.history.back().summary;
  };
  const auto a = run(fixtures::make_backend(fixtures::ActorMode::scripted));
  const auto b = run(fixtures::make_backend(fixtures::ActorMode::never_answer));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, "Filmoaa is a film directed by Direxaa.");
}

TEST(Summarize, InsufficientDocumentsSayingSo) {
  const Agent agent(ArchName::re2search, bundle());
  Gateway gw;
  gw.bind(Role::summarizer, fixtures::make_backend(fixtures::ActorMode::scripted));
  const auto summary = agent.summarize_record(gw, question(), "unknown thing", {});
  EXPECT_NE(summary.find("do not provide"), std::string::npos);
}

TEST(Summarize, NonSummarizingArchitecturesSkipIt) {
  const Agent agent(ArchName::react, bundle());
  Gateway gw;  // no summarizer bound
  const auto r = agent.advance(gw, initial_state(question()), Action::search("q"),
                               [](std::string_view) { return std::vector<Document>{{"d", "t", "x", 1}}; });
  EXPECT_FALSE(std::get<NextState>(r).state.history.back().summary);
}

TEST(Dedupe, FirstSeenOrderWithMultiplicity) {
  std::vector<ParsedAction> ps(5);
  const Action acts[] = {Action::search("a"), Action::answer("b"), Action::search("a"), Action::search("c"),
                         Action::answer("b")};
  for (int i = 0; i < 5; ++i) {
    ps[static_cast<std::size_t>(i)].action = acts[i];
    ps[static_cast<std::size_t>(i)].raw = "raw" + std::to_string(i);
  }
  const auto c = dedupe_candidates(ps);
  EXPECT_EQ(c.actions, (std::vector<Action>{Action::search("a"), Action::answer("b"), Action::search("c")}));
  EXPECT_EQ(c.multiplicity, (std::vector<int>{2, 2, 1}));
  EXPECT_EQ(c.raw_completions, (std::vector<std::string>{"raw0", "raw1", "raw3"}));
}

TEST(ExtractJson, FallsBackToLastBalancedObject) {
  const auto j = extract_last_json_object("text {\"a\": 1} more {\"b\": {\"c\": \"}\"}} tail");
  ASSERT_TRUE(j);
  EXPECT_EQ(j->at("b").at("c"), "}");
  EXPECT_FALSE(extract_last_json_object("no json here"));
}
