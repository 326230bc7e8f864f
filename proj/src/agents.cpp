// SPDX-License-Identifier: Apache-2.0
#include "raggym/agents.hpp"

#include <algorithm>
#include <regex>

#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

std::string_view to_string(ArchName name) {
  switch (name) {
    case ArchName::direct: return "direct";
    case ArchName::cot: return "cot";
    case ArchName::rag: return "rag";
    case ArchName::react: return "react";
    case ArchName::search_o1: return "search_o1";
    case ArchName::re2search: return "re2search";
  }
  return "direct";
}

ArchName parse_arch(std::string_view name) {
  for (auto a : kAllArchitectures) {
    if (to_string(a) == name) return a;
  }
  throw Error(ErrorKind::config, "unknown architecture '" + std::string(name) + "'");
}

AgentArchitecture AgentArchitecture::of(ArchName name) {
  Components c;
  switch (name) {
    case ArchName::re2search:
      c.reasoning_reflection = true;
      [[fallthrough]];
    case ArchName::search_o1:
      c.document_summarization = true;
      [[fallthrough]];
    case ArchName::react:
      c.query_generation = true;
      [[fallthrough]];
    case ArchName::rag:
      c.retrieval_augmentation = true;
      [[fallthrough]];
    case ArchName::cot:
      c.question_reasoning = true;
      [[fallthrough]];
    case ArchName::direct:
      c.answer_generation = true;
  }
  return {name, c};
}

namespace {

constexpr std::string_view kAnswerJson =
    R"(```json
{
    "predicted_answer": "Provide a single letter (for multiple-choice questions), digit, word, or short phrase here."
}
```)";

constexpr std::string_view kActionJson =
    R"(```json
{
    "predicted_answer": "Provide a single letter (for multiple-choice questions), digit, word, or short phrase here.",
    "generated_query": "Provide an entity, question, or statement to be searched in an external knowledge base. Output \"None\" if no query is generated."
}
```)";

constexpr std::string_view kHelpfulSystem =
    "You are a helpful assistant. Your task is to answer a given question following user instructions.";

ArchTemplates direct_templates() {
  ArchTemplates t;
  t.system = "You are a helpful assistant. Answer the given question directly.";
  t.user = "### Question\n{{question}}\n\nOutput the predicted answer immediately, in the following JSON format:\n" +
           std::string(kAnswerJson) + "\n";
  t.user_forced = t.user;
  return t;
}

ArchTemplates cot_templates() {
  ArchTemplates t;
  t.system = std::string(kHelpfulSystem);
  t.user = "### Question\n{{question}}\n\nYour output must include two sections:\n"
           "1. **### Step-by-step Reasoning**:\n  - Think step-by-step and then answer the question.\n\n"
           "2. **### Structured Output**:\n  - Present your predicted answer in the following JSON format:\n" +
           std::string(kAnswerJson) + "\n";
  t.user_forced = t.user;
  return t;
}

ArchTemplates rag_templates() {
  ArchTemplates t;
  t.system = std::string(kHelpfulSystem);
  t.user = "### Relevant Documents\n{{history}}\n\n### Question\n{{question}}\n\nYour output must include two sections:\n"
           "1. **### Step-by-step Reasoning**:\n  - Think step-by-step using the relevant documents and then answer the question.\n\n"
           "2. **### Structured Output**:\n  - Present your predicted answer in the following JSON format:\n" +
           std::string(kAnswerJson) + "\n";
  t.user_forced = t.user;
  return t;
}

ArchTemplates react_templates() {
  ArchTemplates t;
  t.system = "You are a helpful assistant that solves questions by interleaving reasoning with searches in an "
             "external knowledge base.";
  t.user = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
           "Respond with exactly two lines:\n"
           "Thought: <reason about the question and the information-seeking history>\n"
           "Action: Search[<an entity, question, or statement to search>] to gather more information, "
           "or Finish[<a single letter (for multiple-choice questions), digit, word, or short phrase>] to answer.\n";
  t.user_forced = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
                  "No further searches are allowed. Respond with exactly two lines:\n"
                  "Thought: <reason about the question and the information-seeking history>\n"
                  "Action: Finish[<a single letter (for multiple-choice questions), digit, word, or short phrase>]\n";
  return t;
}

ArchTemplates search_o1_templates() {
  ArchTemplates t;
  t.system = std::string(kHelpfulSystem);
  t.user = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
           "Your output must include two sections:\n"
           "1. **### Step-by-step Reasoning**:\n"
           "  - Think step-by-step about the question and the information-seeking history.\n"
           "  - If more information is needed, decide what to search in an external knowledge base next.\n\n"
           "2. **### Structured Output**:\n"
           "  - Present your predicted answer and generated query (if applicable) in the following JSON format:\n" +
           std::string(kActionJson) + "\n";
  t.user_forced = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
                  "Your output must include two sections:\n"
                  "1. **### Step-by-step Reasoning**:\n  - Think step-by-step and then answer the question.\n\n"
                  "2. **### Structured Output**:\n  - Present your predicted answer in the following JSON format:\n" +
                  std::string(kAnswerJson) + "\n";
  return t;
}

ArchTemplates re2search_templates() {
  ArchTemplates t;
  t.system = std::string(kHelpfulSystem);
  t.user = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
           "Your output must include three sections:\n"
           "1. **### Step-by-step Reasoning**:\n  - Think step-by-step and then answer the question.\n\n"
           "2. **### Unverified Claim Identification**:\n"
           "  - Identify if there are claims in the step-by-step reasoning section that are not grounded in the "
           "information-seeking history section.\n"
           "  - If yes, summarize the first piece of missing information as an atomic query to search in an "
           "external knowledge base.\n"
           "  - If no, clearly state that no further query is needed.\n\n"
           "3. **### Structured Output**:\n"
           "  - Present your predicted answer and generated query (if applicable) in the following JSON format:\n" +
           std::string(kActionJson) + "\n";
  t.user_forced = "### Information-seeking History\n{{history}}\n\n### Original Question\n{{question}}\n\n"
                  "Your output must include two sections:\n"
                  "1. **### Step-by-step Reasoning**:\n  - Think step-by-step and then answer the question.\n\n"
                  "2. **### Structured Output**:\n  - Present your predicted answer in the following JSON format:\n" +
                  std::string(kAnswerJson) + "\n";
  return t;
}

constexpr std::string_view kSummarizeTemplate =
    "You are a helpful assistant tasked with answering a follow-up query using the relevant documents provided.\n\n"
    "### Relevant Documents\n{{documents}}\n\n"
    "### Context\nOriginal question: {{question}}\n\n"
    "### Follow-up Query\n{{query}}\n\n"
    "Answer the follow-up query succinctly, using only the information from the documents. When the documents do "
    "not provide sufficient information, explicitly point this out instead of making up facts. Do not include "
    "unrelated or excessive details in the response.";

constexpr std::string_view kRankTemplate =
    "You are a decision-evaluation assistant. Your task is to rank the proposed actions from the most appropriate "
    "to the least appropriate as the next step in a sequential decision-making process aimed at solving a given "
    "question.\n\n"
    "### Original Question:\n{{question}}\n\n"
    "### Information-Seeking History:\n{{curr_history}}\n\n"
    "### Proposed Next Actions:\n{{actions_text}}\n\n"
    "### Important Assumption\n"
    "The agent has no prior knowledge about the subject matter. It must rely solely on the information-seeking "
    "history provided to evaluate and answer the original question. Assumptions not explicitly supported by the "
    "history must not influence the ranking of proposed actions.\n\n"
    "### Evaluation Criteria for Appropriateness\n"
    "1. **Sufficiency Check**:\n"
    "- Determine whether the available information is sufficient to directly answer the original question. If "
    "not, the proposed action to \"Answer\" is inappropriate.\n"
    "- Prioritize queries that gather specific, missing information essential to solving the question.\n"
    "- If the history already contains all necessary information, then \"Answer\" is the most appropriate action, "
    "and the correct answer should be ranked highest.\n\n"
    "2. **Utility Check**:\n"
    "- Queries must be precise, actionable, and directly relevant to solving the question.\n"
    "- Prioritize foundational queries that establish critical context or general knowledge necessary for more "
    "specific follow-ups.\n"
    "- Rank overly narrow or prematurely specific queries lower if they presume knowledge not yet available.\n"
    "- Avoid irrelevant queries that do not contribute to solving the original question.\n\n"
    "3. **Redundancy Check**:\n"
    "- Queries that duplicate information already covered in the history or repeat previous queries should be "
    "ranked lower.\n"
    "- Proposed actions must add new value to the decision-making process by seeking new or clarifying missing "
    "information.\n\n"
    "### Expected Output Format\n"
    "- Output the indices of the ranked actions in JSON format: ```json{\"ranked_indices\": [list of indices]}```.\n"
    "- Rank actions from most appropriate to least appropriate based on the evaluation criteria above.\n"
    "- Do not provide additional explanations or reasoning.";

std::string strip_trailing_commas(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

std::optional<json> parse_object(std::string_view candidate) {
  for (const std::string& text : {std::string(candidate), strip_trailing_commas(candidate)}) {
    try {
      auto j = json::parse(text);
      if (j.is_object()) return j;
    } catch (const json::parse_error&) {
    }
  }
  return std::nullopt;
}

/// End of the string-aware balanced {...} opening at `open`, or npos.
std::size_t matching_close(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return i;
    }
  }
  return std::string_view::npos;
}

std::string fallback_answer(std::string_view completion) {
  std::string best;
  std::size_t start = 0;
  while (start <= completion.size()) {
    auto end = completion.find('\n', start);
    if (end == std::string_view::npos) end = completion.size();
    std::string line = trim(completion.substr(start, end - start));
    if (!line.empty() && line.find_first_not_of("`{}[]#*-") != std::string::npos) best = line;
    start = end + 1;
  }
  static const std::regex prefix(R"(^(?:action\s*:\s*)?(?:final\s+)?(?:answer|finish|search)\s*[:\[]\s*)", std::regex::icase);
  best = std::regex_replace(best, prefix, "");
  while (!best.empty() && best.back() == ']') best.pop_back();
  return trim(best);
}

bool is_none_query(const json& value) {
  if (value.is_null()) return true;
  if (!value.is_string()) return false;
  const auto q = to_lower(trim(value.get<std::string>()));
  return q.empty() || q == "none";
}

std::string json_string_field(const json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw Error(ErrorKind::parse, std::string("field '") + key + "' is not a string");
}

std::string text_before_structured(std::string_view completion) {
  auto pos = completion.rfind("```json");
  if (pos == std::string_view::npos) pos = completion.rfind('{');
  return trim(pos == std::string_view::npos ? completion : completion.substr(0, pos));
}

}  // namespace

std::optional<json> extract_last_json_object(std::string_view text) {
  auto fence = text.rfind("```json");
  if (fence != std::string_view::npos) {
    auto body_start = fence + 7;
    auto body_end = text.find("```", body_start);
    if (body_end == std::string_view::npos) body_end = text.size();
    if (auto j = parse_object(trim(text.substr(body_start, body_end - body_start)))) return j;
  }
  // Outermost objects left to right; a '{' that never closes is skipped.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = text.find('{'); i != std::string_view::npos;) {
    const auto close = matching_close(text, i);
    if (close == std::string_view::npos) {
      i = text.find('{', i + 1);
      continue;
    }
    spans.emplace_back(i, close);
    i = text.find('{', close + 1);
  }
  for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
    if (auto j = parse_object(text.substr(it->first, it->second - it->first + 1))) return j;
  }
  return std::nullopt;
}

PromptBundle PromptBundle::defaults() {
  PromptBundle b;
  b.architectures[ArchName::direct] = direct_templates();
  b.architectures[ArchName::cot] = cot_templates();
  b.architectures[ArchName::rag] = rag_templates();
  b.architectures[ArchName::react] = react_templates();
  b.architectures[ArchName::search_o1] = search_o1_templates();
  b.architectures[ArchName::re2search] = re2search_templates();
  b.summarize = std::string(kSummarizeTemplate);
  b.rank = std::string(kRankTemplate);
  return b;
}

PromptBundle PromptBundle::load(const std::filesystem::path& dir) {
  PromptBundle b = defaults();
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::config, "prompt directory not found", dir.string());
  auto override_with = [&](const std::string& file, std::string& slot) {
    const auto path = dir / file;
    if (std::filesystem::exists(path)) slot = read_file(path);
  };
  for (auto a : kAllArchitectures) {
    auto& t = b.architectures[a];
    const std::string stem(to_string(a));
    override_with(stem + ".system.txt", t.system);
    override_with(stem + ".user.txt", t.user);
    override_with(stem + ".user_forced.txt", t.user_forced);
  }
  override_with("summarize.txt", b.summarize);
  override_with("rank.txt", b.rank);
  return b;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) throw Error(ErrorKind::invalid_input, "unterminated placeholder in template");
    out.append(tmpl.substr(pos, open - pos));
    const std::string name = trim(tmpl.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) throw Error(ErrorKind::invalid_input, "template placeholder has no value", name);
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

Agent::Agent(ArchName arch, std::shared_ptr<const PromptBundle> prompts, AgentOptions options)
    : arch_(AgentArchitecture::of(arch)), prompts_(std::move(prompts)), options_(options) {
  if (!prompts_) prompts_ = std::make_shared<const PromptBundle>(PromptBundle::defaults());
  if (!prompts_->architectures.count(arch)) throw Error(ErrorKind::config, "prompt bundle lacks templates for architecture");
}

std::string Agent::render_question(const Question& q) const {
  std::string out = q.text;
  if (q.task_kind == TaskKind::multiple_choice) {
    for (const auto& c : q.choices) out += "\n" + c.label + ". " + c.text;
  }
  return out;
}

std::string Agent::render_documents(const std::vector<Document>& docs) const {
  if (docs.empty()) return "No documents were retrieved.";
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::string text = docs[i].text;
    if (text.size() > options_.doc_char_budget) text = text.substr(0, options_.doc_char_budget) + "...";
    if (i > 0) out += "\n";
    out += "[" + std::to_string(i + 1) + "] Title: " + docs[i].title + "\n" + text;
  }
  return out;
}

std::string Agent::render_history(const State& state) const {
  if (state.history.empty()) return "No information has been retrieved yet.";
  const bool summaries = arch_.components.document_summarization;
  std::string out;
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& rec = state.history[i];
    if (i > 0) out += "\n\n";
    if (arch_.name == ArchName::rag) {
      out += render_documents(rec.documents);
    } else if (summaries && rec.summary) {
      out += "Query: " + rec.query + "\nAnswer: " + *rec.summary;
    } else {
      out += "Query: " + rec.query + "\nDocuments:\n" + render_documents(rec.documents);
    }
  }
  return out;
}

std::string Agent::state_text(const State& state) const {
  std::string out = "### Question\n" + render_question(state.question);
  if (arch_.components.retrieval_augmentation) out += "\n\n### Information-seeking History\n" + render_history(state);
  return out;
}

bool Agent::can_search(const State& state) const {
  if (arch_.components.query_generation) return true;
  return arch_.name == ArchName::rag && state.history.empty();
}

ChatRequest Agent::render_prompt(const State& state, bool force_answer) const {
  const auto& t = prompts_->architectures.at(arch_.name);
  std::map<std::string, std::string> values{{"question", render_question(state.question)}};
  if (arch_.components.retrieval_augmentation) values["history"] = render_history(state);
  ChatRequest req;
  req.system = render_template(t.system, values);
  req.user = render_template(force_answer ? t.user_forced : t.user, values);
  req.generation.max_tokens = options_.max_tokens;
  return req;
}

ParsedAction Agent::parse_action(std::string_view completion, bool force_answer) const {
  ParsedAction p;
  p.raw = std::string(completion);
  auto fail = [&](std::string why) {
    p.parse_error = std::move(why);
    p.action = Action::answer(p.predicted_answer.value_or(fallback_answer(completion)));
    return p;
  };
  if (trim(completion).empty()) return fail("empty completion");

  if (arch_.name == ArchName::react) {
    const auto search = completion.rfind("Search[");
    const auto finish = completion.rfind("Finish[");
    const bool use_finish = finish != std::string_view::npos && (search == std::string_view::npos || finish > search);
    const auto start = use_finish ? finish : search;
    if (start == std::string_view::npos) return fail("no Search[...] or Finish[...] action found");
    const auto close = completion.rfind(']');
    if (close == std::string_view::npos || close < start) return fail("unterminated action bracket");
    const std::string arg = trim(completion.substr(start + 7, close - start - 7));
    const auto thought = completion.find("Thought:");
    p.reasoning_text = trim(thought == std::string_view::npos ? completion.substr(0, start)
                                                             : completion.substr(thought + 8, start - thought - 8));
    if (p.reasoning_text.size() >= 7 && p.reasoning_text.ends_with("Action:")) {
      p.reasoning_text = trim(p.reasoning_text.substr(0, p.reasoning_text.size() - 7));
    }
    if (use_finish) {
      p.predicted_answer = arg;
      p.action = Action::answer(arg);
      return p;
    }
    if (arg.empty()) return fail("empty Search[] query");
    if (force_answer) return fail("search emitted while searching is disabled");
    p.action = Action::search(arg);
    return p;
  }

  auto obj = extract_last_json_object(completion);
  if (!obj) return fail("no JSON object found");
  p.reasoning_text = text_before_structured(completion);
  try {
    if (obj->contains("predicted_answer") && !obj->at("predicted_answer").is_null()) {
      p.predicted_answer = trim(json_string_field(*obj, "predicted_answer"));
    }
  } catch (const Error& e) {
    return fail(e.what());
  }

  const bool structured_query = arch_.components.query_generation && !force_answer;
  if (!structured_query) {
    if (!p.predicted_answer) return fail("missing predicted_answer");
    p.action = Action::answer(*p.predicted_answer);
    return p;
  }
  if (arch_.components.reasoning_reflection && !p.predicted_answer) return fail("missing predicted_answer");
  if (!obj->contains("generated_query")) return fail("missing generated_query");
  const auto& query = obj->at("generated_query");
  if (is_none_query(query)) {
    if (!p.predicted_answer) return fail("no query and no predicted_answer");
    p.action = Action::answer(*p.predicted_answer);
    return p;
  }
  if (!query.is_string()) return fail("generated_query is not a string");
  p.action = Action::search(trim(query.get<std::string>()));
  return p;
}

std::vector<ParsedAction> Agent::propose_actions(Gateway& gateway, const State& state,
                                                 const ProposalConfig& config) const {
  if (config.n < 1) throw Error(ErrorKind::invalid_input, "propose_actions needs n >= 1");
  if (config.n >= 2 && config.temperature <= 0) {
    throw Error(ErrorKind::invalid_input, "sampling several candidates requires temperature > 0");
  }
  if (arch_.name == ArchName::rag && state.history.empty() && !config.force_answer) {
    ParsedAction p;
    p.action = Action::search(state.question.text);
    p.raw = state.question.text;
    return {p};
  }
  const bool force = config.force_answer || !can_search(state);
  ChatRequest req = render_prompt(state, force);
  req.generation.n_samples = config.n;
  req.generation.temperature = config.temperature;
  req.generation.seed = config.seed;
  const auto completions = gateway.complete(Role::actor, req);

  std::vector<ParsedAction> out;
  out.reserve(completions.size());
  for (std::size_t i = 0; i < completions.size(); ++i) {
    ParsedAction p = parse_action(completions[i], force);
    int attempt = 0;
    while (p.parse_error && attempt < options_.max_repairs) {
      ++attempt;
      ChatRequest repair = req;
      repair.user += "\n\n### Format Correction\nYour previous response could not be parsed (" + *p.parse_error +
                     "). Respond again, following the required output format exactly.";
      repair.generation.n_samples = 1;
      repair.generation.seed = derive_seed(config.seed, "repair/" + std::to_string(i) + "/" + std::to_string(attempt));
      p = parse_action(gateway.complete(Role::actor, repair).front(), force);
    }
    p.repairs = attempt;
    if (p.parse_error) {
      spdlog::warn("unparseable completion for question '{}' after {} repairs ({}); answering '{}'",
                   state.question.id, attempt, *p.parse_error, p.action.payload);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string Agent::summarize_record(Gateway& gateway, const Question& question, std::string_view query,
                                    const std::vector<Document>& docs) const {
  std::map<std::string, std::string> values{
      {"documents", render_documents(docs)}, {"question", render_question(question)}, {"query", std::string(query)}};
  ChatRequest req;
  req.user = render_template(prompts_->summarize, values);
  req.generation.max_tokens = options_.max_tokens;
  return gateway.complete(Role::summarizer, req).front();
}

TransitionResult Agent::advance(Gateway& gateway, const State& state, const Action& action,
                                const RetrieveFn& retrieve) const {
  auto result = transition(state, action, retrieve);
  if (auto* next = std::get_if<NextState>(&result); next && arch_.components.document_summarization) {
    auto& rec = next->state.history.back();
    rec.summary = summarize_record(gateway, state.question, rec.query, rec.documents);
  }
  return result;
}

CandidateSet dedupe_candidates(const std::vector<ParsedAction>& proposals) {
  CandidateSet set;
  std::map<std::string, std::size_t> seen;
  for (const auto& p : proposals) {
    const auto [it, fresh] = seen.emplace(action_text(p.action), set.actions.size());
    if (fresh) {
      set.actions.push_back(p.action);
      set.multiplicity.push_back(1);
      set.raw_completions.push_back(p.raw);
    } else {
      ++set.multiplicity[it->second];
    }
  }
  return set;
}

}  // namespace raggym
