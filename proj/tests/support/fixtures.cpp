// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <atomic>
#include <regex>

#include <unistd.h>

#include "raggym/util.hpp"

namespace raggym::fixtures {

const Action kWrongAnswer = Action::answer("Nobody");
const Action kIrrelevantSearch = Action::search("weather forecast for Vandor harbor");

std::string code_for(int i) {
  std::string out;
  do {
    out.insert(out.begin(), static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i > 0);
  while (out.size() < 2) out.insert(out.begin(), 'a');
  return out;
}

GoldPath gold_path(std::string_view code) {
  const std::string c(code);
  return {"Who directed Filmo" + c + "?", "Who is Direx" + c + " married to?", "Spousa" + c};
}

std::optional<std::string> find_code(std::string_view text) {
  static const std::regex re("Filmo([a-z]+)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, re)) return std::nullopt;
  return m[1].str();
}

bool knows_spouse(std::string_view text, std::string_view code) {
  return text.find("married to Spousa" + std::string(code)) != std::string_view::npos;
}

namespace {

bool knows_director(std::string_view text, std::string_view code) {
  return text.find("directed by Direx" + std::string(code)) != std::string_view::npos;
}

bool searching_disabled(const ChatRequest& req) { return req.user.find("\"generated_query\"") == std::string::npos; }

std::string summarize_reply(const ChatRequest& req) {
  const auto at = req.user.find("[1] Title: ");
  if (at == std::string::npos) return "The documents do not provide this information.";
  const auto start = req.user.find('\n', at);
  const auto end = req.user.find('\n', start + 1);
  return req.user.substr(start + 1, end - start - 1);
}

std::string annotate_reply(const ChatRequest& req) {
  const std::string& p = req.user;
  const auto start = p.find("### Proposed Next Actions:\n");
  const auto end = p.find("\n\n", start);
  const std::string block = p.substr(start, end - start);
  static const std::regex line(R"((\d+)\. (Search|Answer): ([^\n]*))");
  const Action gold = gold_action(p.substr(0, start));
  std::vector<int> first;
  std::vector<int> rest;
  for (std::sregex_iterator it(block.begin(), block.end(), line), stop; it != stop; ++it) {
    const int idx = std::stoi((*it)[1].str());
    const Action a = (*it)[2].str() == "Search" ? Action::search((*it)[3].str()) : Action::answer((*it)[3].str());
    (a == gold ? first : rest).push_back(idx);
  }
  first.insert(first.end(), rest.begin(), rest.end());
  return "The first action is the most useful.\n```json\n" + json{{"ranked_indices", first}}.dump() + "\n```";
}

std::string forced_reply(const ChatRequest& req) {
  const auto code = find_code(req.user);
  const std::string guess = code && knows_spouse(req.user, *code) ? gold_path(*code).answer : "unknown";
  return "### Step-by-step Reasoning\nNo more searching.\n\n### Structured Output\n```json\n" +
         json{{"predicted_answer", guess}}.dump() + "\n```";
}

}  // namespace

Action gold_action(std::string_view text) {
  const auto code = find_code(text);
  if (!code) return kWrongAnswer;
  const auto g = gold_path(*code);
  if (knows_spouse(text, *code)) return Action::answer(g.answer);
  if (knows_director(text, *code)) return Action::search(g.q2);
  return Action::search(g.q1);
}

TwoHopWorld make_world(int n_questions, int top_k) {
  TwoHopWorld w;
  for (int i = 0; i < n_questions; ++i) {
    const std::string c = code_for(i);
    w.corpus.push_back({"film-" + c, "Filmo" + c, "Filmo" + c + " is a film directed by Direx" + c + "."});
    w.corpus.push_back({"person-" + c, "Direx" + c, "Direx" + c + " is married to Spousa" + c + "."});
    Question q;
    q.id = "q-" + c;
    q.text = "Who is the spouse of the director of Filmo" + c + "?";
    q.gold = "Spousa" + c;
    w.questions.push_back(q);
  }
  const char* filler[] = {"Vandor harbor has a mild climate with frequent fog.",
                          "The weather in the northern valleys is cold and dry.",
                          "Okrin bread is baked with rye and caraway.",
                          "Tesselate tiles were common in old market halls.",
                          "A forecast is an estimate of future conditions."};
  for (int i = 0; i < 5; ++i) w.corpus.push_back({"filler-" + std::to_string(i), "Filler " + std::to_string(i), filler[i]});
  w.index = std::make_shared<const LexicalIndex>(ingest_corpus(w.corpus));
  EnvConfig cfg;
  cfg.top_k = top_k;
  w.env = std::make_shared<const RetrievalEnv>(w.index, cfg);
  auto env = w.env;
  w.retrieve = [env](std::string_view q) { return env->retrieve(q); };
  return w;
}

std::string re2search_completion(const Action& action) {
  json out{{"predicted_answer", action.is_search() ? "unknown" : action.payload},
           {"generated_query", action.is_search() ? json(action.payload) : json(nullptr)}};
  return "### Step-by-step Reasoning\nWorking through the question.\n\n"
         "### Unverified Claim Identification\n" +
         std::string(action.is_search() ? "A fact is still missing." : "No further query is needed.") +
         "\n\n### Structured Output\n```json\n" + out.dump(4) + "\n```";
}

std::shared_ptr<Backend> make_backend(ActorMode mode, double distractor_p) {
  auto counter = std::make_shared<std::atomic<int>>(0);
  return std::make_shared<FunctionBackend>([mode, distractor_p, counter](Role role, const ChatRequest& req) {
    const auto n = static_cast<std::size_t>(req.generation.n_samples);
    if (role == Role::summarizer) return std::vector<std::string>(n, summarize_reply(req));
    if (role == Role::annotator) return std::vector<std::string>(n, annotate_reply(req));
    if (searching_disabled(req)) return std::vector<std::string>(n, forced_reply(req));

    const Action gold = gold_action(req.user);
    std::vector<std::string> out;
    Rng rng(req.generation.seed.value_or(0));
    for (std::size_t k = 0; k < n; ++k) {
      Action a = gold;
      switch (mode) {
        case ActorMode::scripted: break;
        case ActorMode::menu:
          if (k == 0) a = kWrongAnswer;
          if (k == 1) a = kIrrelevantSearch;
          break;
        case ActorMode::stochastic:
          if (rng.uniform() < distractor_p) a = rng.uniform() < 0.5 ? kWrongAnswer : kIrrelevantSearch;
          break;
        case ActorMode::never_answer:
          a = Action::search("more about attempt " + std::to_string(counter->fetch_add(1)));
          break;
      }
      out.push_back(re2search_completion(a));
    }
    return out;
  });
}

Gateway make_gateway(ActorMode mode, double distractor_p) {
  Gateway gw;
  auto backend = make_backend(mode, distractor_p);
  gw.bind(Role::actor, backend);
  gw.bind(Role::summarizer, backend);
  gw.bind(Role::annotator, backend);
  return gw;
}

double OracleCritic::score(std::string_view state_text, const Action& action) const {
  const auto code = find_code(state_text);
  if (!code) return 0.0;
  const auto g = gold_path(*code);
  const bool good = action == Action::search(g.q1) || action == Action::search(g.q2) || action == Action::answer(g.answer);
  return good ? 1.0 : 0.0;
}

Agent re2search_agent() {
  return Agent(ArchName::re2search, std::make_shared<const PromptBundle>(PromptBundle::defaults()));
}

void write_cli_fixture(const std::filesystem::path& dir, int n_questions) {
  const auto world = make_world(n_questions);
  std::vector<json> corpus;
  for (const auto& d : world.corpus) corpus.push_back(d);
  write_jsonl(dir / "corpus.jsonl", corpus);
  std::vector<json> dataset;
  for (const auto& q : world.questions) dataset.push_back(q);
  write_jsonl(dir / "dataset.jsonl", dataset);

  std::vector<json> script;
  const std::string wrong = re2search_completion(kWrongAnswer);
  for (int i = 0; i < n_questions; ++i) {
    const std::string c = code_for(i);
    const auto g = gold_path(c);
    const std::string film = "Filmo" + c;
    script.push_back({{"role", "summarizer"},
                      {"contains", {film, "### Follow-up Query\n" + g.q1}},
                      {"completions", {film + " is a film directed by Direx" + c + "."}}});
    script.push_back({{"role", "summarizer"},
                      {"contains", {film, "### Follow-up Query\n" + g.q2}},
                      {"completions", {"Direx" + c + " is married to Spousa" + c + "."}}});
    script.push_back({{"role", "annotator"}, {"contains", {film}}, {"completions", {"```json\n{\"ranked_indices\": [0, 1]}\n```"}}});
    script.push_back({{"role", "actor"},
                      {"contains", {film, "married to Spousa" + c}},
                      {"completions", {re2search_completion(Action::answer(g.answer)), wrong}}});
    script.push_back({{"role", "actor"},
                      {"contains", {film, "directed by Direx" + c}},
                      {"completions", {re2search_completion(Action::search(g.q2)), wrong}}});
    script.push_back({{"role", "actor"},
                      {"contains", {film}},
                      {"completions", {re2search_completion(Action::search(g.q1)), wrong}}});
  }
  write_jsonl(dir / "mock.jsonl", script);

  json config{{"seed", 7},
              {"endpoints", {{"actor", {{"kind", "mock"}, {"script", (dir / "mock.jsonl").string()}}}}},
              {"env", {{"top_k", 3}}},
              {"agent", {{"arch", "re2search"}}},
              {"inference", {{"n_candidates", 1}, {"max_steps", 10}}},
              {"collection", {{"n_candidates", 2}, {"max_steps", 10}, {"temperature", 1.0}}},
              {"paths", {{"dataset", (dir / "dataset.jsonl").string()}, {"corpus", (dir / "corpus.jsonl").string()}}}};
  write_file(dir / "config.json", config.dump(2) + "\n");
}

std::filesystem::path temp_dir(std::string_view name) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("raggym-test-" + std::string(name) + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace raggym::fixtures
