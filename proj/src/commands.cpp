// SPDX-License-Identifier: Apache-2.0
#include "raggym/commands.hpp"

#include <deque>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "raggym/agents.hpp"
#include "raggym/config.hpp"
#include "raggym/critic.hpp"
#include "raggym/error.hpp"
#include "raggym/evaluation.hpp"
#include "raggym/inference.hpp"
#include "raggym/manifest.hpp"
#include "raggym/metrics.hpp"
#include "raggym/process_data.hpp"
#include "raggym/retrieval.hpp"

namespace raggym {

namespace {

namespace fs = std::filesystem;

const std::map<std::string, std::string> kSchemas = {
    {"trajectory", std::string(kTrajectorySchema)}, {"result", std::string(kResultSchema)},
    {"metrics", "raggym.metrics.v1"},               {"preference", "raggym.preference.v1"},
    {"index", "raggym.index.v1"},                   {"critic", "raggym.critic.v1"},
    {"manifest", std::string(kManifestSchema)},     {"config", "raggym.config.v1"}};

// ---------------------------------------------------------------------------
// Dense retrieval and critic stand-ins that record live calls or serve them
// back during replay.

json ranked_to_json(const RankedList& list) {
  json out = json::array();
  for (const auto& e : list) out.push_back({{"doc_id", e.doc_id}, {"score", e.score}});
  return out;
}

class RecordingDense final : public DenseRetriever {
 public:
  explicit RecordingDense(std::shared_ptr<DenseRetriever> inner) : inner_(std::move(inner)) {}

  RankedList search(std::string_view query, int top_k) override {
    json row{{"query", std::string(query)}, {"top_k", top_k}};
    try {
      auto list = inner_->search(query, top_k);
      row["entries"] = ranked_to_json(list);
      record(std::move(row));
      return list;
    } catch (const std::exception& e) {
      row["error"] = e.what();
      record(std::move(row));
      throw;
    }
  }

  std::vector<json> rows() const {
    std::lock_guard lock(mutex_);
    return rows_;
  }

 private:
  void record(json row) {
    std::lock_guard lock(mutex_);
    rows_.push_back(std::move(row));
  }

  std::shared_ptr<DenseRetriever> inner_;
  mutable std::mutex mutex_;
  std::vector<json> rows_;
};

class ReplayDense final : public DenseRetriever {
 public:
  explicit ReplayDense(const fs::path& log) {
    for (auto& row : read_jsonl(log)) {
      slots_[{row.at("query").get<std::string>(), row.at("top_k").get<int>()}].push_back(std::move(row));
    }
  }

  RankedList search(std::string_view query, int top_k) override {
    std::lock_guard lock(mutex_);
    auto it = slots_.find({std::string(query), top_k});
    if (it == slots_.end() || it->second.empty()) {
      throw Error(ErrorKind::replay_miss, "dense retrieval call not in the recorded log", std::string(query));
    }
    json row = std::move(it->second.front());
    it->second.pop_front();
    if (row.contains("error")) throw Error(ErrorKind::environment, row.at("error").get<std::string>(), std::string(query));
    RankedList list;
    for (const auto& e : row.at("entries")) list.push_back({e.at("doc_id").get<std::string>(), e.at("score").get<double>()});
    return list;
  }

 private:
  std::mutex mutex_;
  std::map<std::pair<std::string, int>, std::deque<json>> slots_;
};

/// Serves the scores an endpoint critic gave during the recorded run.
class RecordedCritic final : public Critic {
 public:
  void add(std::string state_text, const Action& action, double score) {
    scores_[{std::move(state_text), action_text(action)}] = score;
  }

  double score(std::string_view state_text, const Action& action) const override {
    const auto it = scores_.find({std::string(state_text), action_text(action)});
    if (it == scores_.end()) throw Error(ErrorKind::replay_miss, "critic score not in the recorded run", action_text(action));
    return it->second;
  }

 private:
  std::map<std::pair<std::string, std::string>, double> scores_;
};

// ---------------------------------------------------------------------------

std::shared_ptr<Backend> make_backend(const EndpointConfig& e) {
  switch (e.kind) {
    case EndpointKind::mock: return ScriptedBackend::from_file(e.script, e.strict);
    case EndpointKind::openai:
      return std::make_shared<OpenAiBackend>(OpenAiBackend::Options{e.http, e.model, e.max_in_flight, e.api_key_env});
    case EndpointKind::replay: return std::make_shared<ReplayBackend>(ExchangeLog::load(e.log));
  }
  throw Error(ErrorKind::config, "unsupported endpoint kind");
}

/// Roles without their own endpoint share the actor's backend.
void bind_live(Gateway& gateway, const GlobalConfig& cfg) {
  const auto actor = cfg.endpoints.find(Role::actor);
  if (actor == cfg.endpoints.end()) throw ConfigError(std::vector<ConfigDiagnostic>{{"endpoints.actor", "required"}});
  auto actor_backend = make_backend(actor->second);
  gateway.bind(Role::actor, actor_backend);
  for (Role role : {Role::summarizer, Role::annotator}) {
    const auto it = cfg.endpoints.find(role);
    gateway.bind(role, it == cfg.endpoints.end() ? actor_backend : make_backend(it->second));
  }
}

bool is_url(std::string_view s) { return s.starts_with("http://") || s.starts_with("https://"); }

fs::path index_file(const std::string& path) {
  fs::path p(path);
  return fs::is_directory(p) ? p / "index.json" : p;
}

struct Mode {
  bool replay = false;
  fs::path run_dir;  // recorded run when replaying
};

/// Everything a collect or run needs, built identically live and in replay.
struct Pipeline {
  GlobalConfig cfg;
  std::string command;
  std::vector<Question> questions;
  std::shared_ptr<const LexicalIndex> index;
  std::shared_ptr<RecordingDense> dense_recorder;
  std::unique_ptr<RetrievalEnv> env;
  std::unique_ptr<Agent> agent;
  Gateway gateway;
  std::map<std::string, InputRef> inputs;
  std::string run_id;
};

void add_input(Pipeline& p, const std::string& name, const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::io, "input file not found", path.string());
  p.inputs[name] = input_ref(path);
}

void build_pipeline(Pipeline& p, const Mode& mode) {
  const auto& cfg = p.cfg;
  if (cfg.paths.dataset.empty()) throw ConfigError(std::vector<ConfigDiagnostic>{{"paths.dataset", "required (--dataset)"}});
  add_input(p, "dataset", cfg.paths.dataset);
  p.questions = load_questions(cfg.paths.dataset);

  if (!cfg.paths.index.empty()) {
    const auto file = index_file(cfg.paths.index);
    add_input(p, "index", file);
    p.index = std::make_shared<const LexicalIndex>(load_index(file));
  } else if (!cfg.paths.corpus.empty()) {
    add_input(p, "corpus", cfg.paths.corpus);
    const auto docs = load_corpus(cfg.paths.corpus);
    p.index = std::make_shared<const LexicalIndex>(ingest_corpus(docs));
  } else {
    throw ConfigError(std::vector<ConfigDiagnostic>{{"paths.index", "an index (--index) or a corpus (--corpus) is required"}});
  }

  std::shared_ptr<DenseRetriever> dense;
  if (cfg.env.dense_endpoint) {
    if (mode.replay) {
      dense = std::make_shared<ReplayDense>(mode.run_dir / "dense.jsonl");
    } else {
      p.dense_recorder = std::make_shared<RecordingDense>(std::make_shared<HttpDenseRetriever>(*cfg.env.dense_endpoint));
      dense = p.dense_recorder;
    }
  }
  p.env = std::make_unique<RetrievalEnv>(p.index, cfg.env, dense);

  std::shared_ptr<const PromptBundle> prompts;
  if (!cfg.agent.prompts_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(cfg.agent.prompts_dir)) {
      if (entry.is_regular_file()) add_input(p, "prompt:" + entry.path().filename().string(), entry.path());
    }
    prompts = std::make_shared<const PromptBundle>(PromptBundle::load(cfg.agent.prompts_dir));
  } else {
    prompts = std::make_shared<const PromptBundle>(PromptBundle::defaults());
  }
  p.agent = std::make_unique<Agent>(cfg.agent.arch, prompts, cfg.agent.options);

  if (mode.replay) {
    auto backend = std::make_shared<ReplayBackend>(ExchangeLog::load(mode.run_dir / "exchanges.jsonl"));
    for (Role role : {Role::actor, Role::summarizer, Role::annotator}) p.gateway.bind(role, backend);
  } else {
    bind_live(p.gateway, cfg);
  }
}

// ---------------------------------------------------------------------------

json error_json(std::string_view kind, std::string_view message, std::string_view context,
                const std::vector<ConfigDiagnostic>& diagnostics = {}) {
  json err{{"kind", kind}, {"message", message}};
  if (!context.empty()) err["context"] = context;
  if (!diagnostics.empty()) {
    json d = json::array();
    for (const auto& x : diagnostics) d.push_back({{"field", x.field}, {"message", x.message}});
    err["diagnostics"] = d;
  }
  return json{{"error", err}};
}

RunManifest start_manifest(const Pipeline& p) {
  RunManifest m;
  m.run_id = p.run_id;
  m.command = p.command;
  m.config = config_to_json(p.cfg);
  m.seed = p.cfg.seed;
  m.schema_versions = kSchemas;
  m.inputs = p.inputs;
  m.started_at = utc_timestamp();
  return m;
}

void finish(AtomicDir& out, RunManifest& manifest) {
  write_manifest(out, manifest);
  out.commit();
  std::cout << dump_line(json{{"run_id", manifest.run_id}, {"out", out.target().string()}, {"counts", manifest.counts}})
            << "\n";
}

void write_exchanges(const Pipeline& p, const AtomicDir& out) {
  p.gateway.log().save(out.path("exchanges.jsonl"));
  if (p.dense_recorder) write_jsonl(out.path("dense.jsonl"), p.dense_recorder->rows());
}

bool all_gold(std::span<const Question> questions) {
  return std::all_of(questions.begin(), questions.end(), [](const Question& q) { return q.gold.has_value(); });
}

void write_metrics(const AtomicDir& out, std::span<const RunResult> results, std::span<const Question> gold,
                   const std::string& dataset_id, const std::string& run_id) {
  const auto report = evaluate(results, gold, dataset_id, run_id);
  write_file(out.path("metrics.json"), json(report).dump(2) + "\n");
  write_file(out.path("metrics.csv"), report_csv(report));
}

std::string dataset_id(const std::string& path) { return fs::path(path).stem().string(); }

/// Replays must read exactly the inputs the recorded run read.
void check_inputs(const Pipeline& p, const RunManifest& recorded) {
  for (const auto& [name, ref] : recorded.inputs) {
    const auto it = p.inputs.find(name);
    if (it == p.inputs.end() || it->second.sha256 != ref.sha256) {
      throw Error(ErrorKind::io, "input changed since the recorded run: " + name, ref.path);
    }
  }
  for (const auto& [name, ref] : p.inputs) {
    if (!recorded.inputs.count(name)) throw Error(ErrorKind::io, "replay reads an unrecorded input: " + name, ref.path);
  }
}

// ---------------------------------------------------------------------------
// run

std::unique_ptr<Critic> make_critic(Pipeline& p, const Mode& mode) {
  const auto& spec = p.cfg.inference.critic;
  if (spec == "none") return nullptr;
  if (is_url(spec)) {
    if (!mode.replay) {
      HttpEndpoint endpoint;
      endpoint.url = spec;
      return std::make_unique<EndpointCritic>(endpoint);
    }
    auto recorded = std::make_unique<RecordedCritic>();
    for (const auto& row : read_jsonl(mode.run_dir / "trajectories.jsonl")) {
      const auto t = row.get<Trajectory>();
      for (const auto& step : t.steps) {
        if (!step.scores) continue;
        const auto text = p.agent->state_text(step.state_snapshot);
        for (std::size_t i = 0; i < step.candidates.size() && i < step.scores->size(); ++i) {
          recorded->add(text, step.candidates[i], (*step.scores)[i]);
        }
      }
    }
    return recorded;
  }
  add_input(p, "critic", spec);
  return std::make_unique<LinearCritic>(LinearCritic::load(spec));
}

void execute_run(Pipeline& p, const Mode& mode, AtomicDir& out, const RunManifest* recorded = nullptr) {
  auto critic = make_critic(p, mode);
  if (recorded) check_inputs(p, *recorded);
  InferenceConfig icfg = p.cfg.inference.config;
  icfg.use_critic = critic != nullptr;
  icfg.validate();
  p.run_id = compute_run_id(p.command, config_to_json(p.cfg), p.cfg.seed, p.inputs);
  auto manifest = start_manifest(p);

  const auto results = run_episodes(*p.agent, p.gateway, p.env->as_function(), critic.get(), p.questions, icfg,
                                    p.cfg.seed, p.run_id, p.cfg.jobs);

  std::vector<json> trajectories, rows;
  std::int64_t failed = 0, answered = 0;
  for (const auto& r : results) {
    trajectories.emplace_back(r.trajectory);
    rows.emplace_back(r);
    failed += r.failed ? 1 : 0;
    answered += r.answered ? 1 : 0;
  }
  write_jsonl(out.path("trajectories.jsonl"), trajectories);
  write_jsonl(out.path("results.jsonl"), rows);
  if (!results.empty()) write_file(out.path("query_stats.json"), json(query_stats(results)).dump(2) + "\n");
  if (all_gold(p.questions)) write_metrics(out, results, p.questions, dataset_id(p.cfg.paths.dataset), p.run_id);
  write_exchanges(p, out);
  if (failed > 0) spdlog::warn("{} of {} episodes failed; see results.jsonl", failed, results.size());

  manifest.counts = {{"questions", static_cast<std::int64_t>(p.questions.size())},
                     {"episodes", static_cast<std::int64_t>(results.size())},
                     {"answered", answered},
                     {"failed", failed},
                     {"exchanges", static_cast<std::int64_t>(p.gateway.log().size())}};
  finish(out, manifest);
}

// ---------------------------------------------------------------------------
// collect

json annotation_json(const std::string& question_id, int step_index, const RankingAnnotation& a) {
  json j{{"question_id", question_id},
         {"step_index", step_index},
         {"ranked_indices", a.ranked_indices},
         {"annotator", to_string(a.annotator)},
         {"raw", a.raw},
         {"rollouts", a.rollouts}};
  j["scores"] = a.scores ? json(*a.scores) : json(nullptr);
  return j;
}

std::unique_ptr<Annotator> make_annotator(Pipeline& p) {
  const auto& c = p.cfg.collection;
  switch (c.annotator) {
    case AnnotatorKind::llm: return std::make_unique<LlmAnnotator>(c.rank_retries);
    case AnnotatorKind::rollout: return std::make_unique<RolloutAnnotator>(c.rollouts, c.rollout_temperature);
    case AnnotatorKind::human_file:
      if (c.human_file.empty()) throw ConfigError(std::vector<ConfigDiagnostic>{{"collection.human_file", "required for the human-file annotator"}});
      add_input(p, "human_file", c.human_file);
      return std::make_unique<HumanFileAnnotator>(c.human_file);
  }
  return nullptr;
}

void execute_collect(Pipeline& p, AtomicDir& out, const RunManifest* recorded = nullptr) {
  auto annotator = make_annotator(p);
  if (recorded) check_inputs(p, *recorded);
  p.run_id = compute_run_id(p.command, config_to_json(p.cfg), p.cfg.seed, p.inputs);
  auto manifest = start_manifest(p);

  const auto run = run_collection(*p.agent, p.gateway, p.env->as_function(), *annotator, p.questions,
                                  p.cfg.collection.config, p.cfg.seed, p.run_id, p.cfg.jobs);

  std::vector<json> trajectories, unusable, annotations;
  for (const auto& r : run.results) {
    if (!r.usable) {
      unusable.push_back({{"question_id", r.trajectory.question.id}, {"error", r.error.value_or("")}});
      continue;
    }
    trajectories.emplace_back(r.trajectory);
    for (std::size_t s = 0; s < r.annotations.size(); ++s) {
      annotations.push_back(annotation_json(r.trajectory.question.id, static_cast<int>(s) + 1, r.annotations[s]));
    }
  }
  write_jsonl(out.path("trajectories.jsonl"), trajectories);
  write_jsonl(out.path("unusable.jsonl"), unusable);
  write_jsonl(out.path("annotations.jsonl"), annotations);
  save_preferences(out.path("preferences.jsonl"), run.dataset.tuples);
  std::map<std::string, std::int64_t> export_counts;
  for (ExportFormat f : {ExportFormat::sft, ExportFormat::dpo, ExportFormat::rm}) {
    const auto rows = export_records(run.dataset.tuples, f);
    write_jsonl(out.path(std::string(to_string(f)) + ".jsonl"), rows);
    export_counts[std::string(to_string(f))] = static_cast<std::int64_t>(rows.size());
  }
  if (run.dataset.tuples.empty()) spdlog::warn("collection produced no preference tuples");
  write_exchanges(p, out);

  const auto& fs_ = run.dataset.filter_stats;
  manifest.counts = {{"questions", static_cast<std::int64_t>(p.questions.size())},
                     {"sampled", static_cast<std::int64_t>(fs_.sampled)},
                     {"retained", static_cast<std::int64_t>(fs_.retained)},
                     {"dropped", static_cast<std::int64_t>(fs_.dropped)},
                     {"unusable", static_cast<std::int64_t>(run.unusable)},
                     {"tuples", static_cast<std::int64_t>(run.dataset.tuples.size())},
                     {"sft", export_counts["sft"]},
                     {"dpo", export_counts["dpo"]},
                     {"rm", export_counts["rm"]},
                     {"exchanges", static_cast<std::int64_t>(p.gateway.log().size())}};
  finish(out, manifest);
}

// ---------------------------------------------------------------------------
// Option plumbing. Flags override config-file values only when given.

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool force = false;
  std::string log_level = "warn";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Configuration file (JSON)");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Root seed");
  c.jobs_opt = cmd->add_option("--jobs", c.jobs, "Parallel workers");
  cmd->add_flag("--force", c.force, "Replace an existing output directory");
  cmd->add_option("--log-level", c.log_level, "trace|debug|info|warn|error|off");
}

GlobalConfig base_config(const Common& c) {
  GlobalConfig cfg = c.config.empty() ? GlobalConfig{} : load_config(c.config);
  if (c.seed_opt->count()) cfg.seed = c.seed;
  if (c.jobs_opt->count()) cfg.jobs = c.jobs;
  return cfg;
}

template <class T>
void set_if(CLI::Option* opt, const T& value, T& target) {
  if (opt->count()) target = value;
}

struct PipelineFlags {
  std::string dataset, index, corpus, arch, prompts;
  int n = 1, max_steps = 10;
  double temperature = 0;
  CLI::Option *dataset_opt, *index_opt, *corpus_opt, *arch_opt, *prompts_opt, *n_opt, *steps_opt, *temp_opt;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
  f.dataset_opt = cmd->add_option("--dataset", f.dataset, "Questions JSONL");
  f.index_opt = cmd->add_option("--index", f.index, "Index file or directory from `index`");
  f.corpus_opt = cmd->add_option("--corpus", f.corpus, "Corpus JSONL, indexed in memory");
  f.arch_opt = cmd->add_option("--arch", f.arch, "direct|cot|rag|react|search_o1|re2search");
  f.prompts_opt = cmd->add_option("--prompts", f.prompts, "Directory of prompt template overrides");
  f.n_opt = cmd->add_option("--n", f.n, "Candidate actions per step");
  f.steps_opt = cmd->add_option("--max-steps", f.max_steps, "Step cap");
  f.temp_opt = cmd->add_option("--temperature", f.temperature, "Sampling temperature");
}

void apply_pipeline_flags(const PipelineFlags& f, GlobalConfig& cfg) {
  set_if(f.dataset_opt, f.dataset, cfg.paths.dataset);
  if (f.index_opt->count()) {
    cfg.paths.index = f.index;
    cfg.paths.corpus.clear();
  }
  if (f.corpus_opt->count()) {
    cfg.paths.corpus = f.corpus;
    cfg.paths.index.clear();
  }
  if (f.arch_opt->count()) cfg.agent.arch = parse_arch(f.arch);
  set_if(f.prompts_opt, f.prompts, cfg.agent.prompts_dir);
}

void set_log_level(const std::string& level) {
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError(std::vector<ConfigDiagnostic>{{"--log-level", "unknown level '" + level + "'"}});
  spdlog::set_level(lvl);
}

std::vector<json> read_results(const fs::path& dir) {
  const auto file = dir / "results.jsonl";
  if (!fs::exists(file)) throw Error(ErrorKind::io, "run directory has no results.jsonl", dir.string());
  return read_jsonl(file);
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"raggym: agentic retrieval-augmented generation experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // index
  Common index_common;
  std::string index_corpus, index_out;
  auto* index_cmd = app.add_subcommand("index", "Build a BM25 index from a corpus");
  add_common(index_cmd, index_common);
  index_cmd->add_option("--corpus", index_corpus, "Corpus JSONL {doc_id, title, text}")->required();
  index_cmd->add_option("--out", index_out, "Output directory")->required();

  // collect
  Common collect_common;
  PipelineFlags collect_flags;
  std::string collect_out, annotator, human_file, pairing;
  int rollouts = 4;
  auto* collect_cmd = app.add_subcommand("collect", "Collect annotated trajectories and preference data");
  add_common(collect_cmd, collect_common);
  add_pipeline_flags(collect_cmd, collect_flags);
  auto* annotator_opt = collect_cmd->add_option("--annotator", annotator, "llm|rollout|human-file");
  auto* human_opt = collect_cmd->add_option("--human-file", human_file, "Ranking annotations JSONL");
  auto* rollouts_opt = collect_cmd->add_option("--rollouts", rollouts, "Rollouts per candidate");
  auto* pairing_opt = collect_cmd->add_option("--pairing", pairing, "top_vs_rest|top_vs_last");
  collect_cmd->add_option("--out", collect_out, "Output directory")->required();

  // run
  Common run_common;
  PipelineFlags run_flags;
  std::string run_out, critic;
  auto* run_cmd = app.add_subcommand("run", "Run episodes, optionally with critic-guided best-of-N");
  add_common(run_cmd, run_common);
  add_pipeline_flags(run_cmd, run_flags);
  auto* critic_opt = run_cmd->add_option("--critic", critic, "Critic file, critic endpoint URL, or none");
  run_cmd->add_option("--out", run_out, "Output directory")->required();

  // train-critic
  Common train_common;
  std::string pairs, train_out;
  double lr = 0, l2 = 0;
  int epochs = 0, batch = 0;
  std::size_t dimension = 0;
  auto* train_cmd = app.add_subcommand("train-critic", "Train the linear critic on preference tuples");
  add_common(train_cmd, train_common);
  train_cmd->add_option("--pairs", pairs, "preferences.jsonl or rm.jsonl")->required();
  auto* lr_opt = train_cmd->add_option("--lr", lr, "Learning rate");
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Epochs");
  auto* batch_opt = train_cmd->add_option("--batch-size", batch, "Mini-batch size");
  auto* l2_opt = train_cmd->add_option("--l2", l2, "L2 penalty");
  auto* dim_opt = train_cmd->add_option("--dimension", dimension, "Hashed feature dimension");
  train_cmd->add_option("--out", train_out, "Output directory")->required();

  // eval
  Common eval_common;
  std::string pred, gold, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score a run directory against gold answers");
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--pred", pred, "Run directory")->required();
  eval_cmd->add_option("--gold", gold, "Questions JSONL with gold answers")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();

  // report
  Common report_common;
  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Aggregate metrics across runs or tasks");
  add_common(report_cmd, report_common);
  report_cmd->add_option("--runs", report_runs, "Directories holding metrics.json")->required();
  report_cmd->add_option("--out", report_out, "Optional output directory");

  // replay
  Common replay_common;
  std::string replay_run, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "Re-execute a recorded run or collection from its exchange log");
  add_common(replay_cmd, replay_common);
  replay_cmd->add_option("--run", replay_run, "Recorded run directory")->required();
  replay_cmd->add_option("--out", replay_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << dump_line(error_json("usage", e.what(), "")) << "\n";
    return kExitConfig;
  }

  if (*index_cmd) {
    set_log_level(index_common.log_level);
    auto cfg = base_config(index_common);
    AtomicDir out(index_out, index_common.force);
    Pipeline p;
    p.cfg = cfg;
    p.command = "index";
    add_input(p, "corpus", index_corpus);
    p.run_id = compute_run_id(p.command, config_to_json(cfg), cfg.seed, p.inputs);
    auto manifest = start_manifest(p);
    const auto docs = load_corpus(index_corpus);
    const auto index = ingest_corpus(docs);
    save_index(index, out.path("index.json"));
    manifest.counts = {{"documents", static_cast<std::int64_t>(index.doc_count)}};
    finish(out, manifest);
    return kExitOk;
  }

  if (*collect_cmd) {
    set_log_level(collect_common.log_level);
    Pipeline p;
    p.cfg = base_config(collect_common);
    apply_pipeline_flags(collect_flags, p.cfg);
    auto& c = p.cfg.collection;
    set_if(collect_flags.n_opt, collect_flags.n, c.config.n_candidates);
    set_if(collect_flags.steps_opt, collect_flags.max_steps, c.config.max_steps);
    set_if(collect_flags.temp_opt, collect_flags.temperature, c.config.temperature);
    if (annotator_opt->count()) c.annotator = parse_annotator_kind(annotator);
    set_if(human_opt, human_file, c.human_file);
    set_if(rollouts_opt, rollouts, c.rollouts);
    if (pairing_opt->count()) c.config.pairing = parse_pairing(pairing);
    p.cfg.validate();
    p.command = "collect";
    AtomicDir out(collect_out, collect_common.force);
    build_pipeline(p, Mode{});
    execute_collect(p, out);
    return kExitOk;
  }

  if (*run_cmd) {
    set_log_level(run_common.log_level);
    Pipeline p;
    p.cfg = base_config(run_common);
    apply_pipeline_flags(run_flags, p.cfg);
    auto& i = p.cfg.inference;
    set_if(run_flags.n_opt, run_flags.n, i.config.n_candidates);
    set_if(run_flags.steps_opt, run_flags.max_steps, i.config.max_steps);
    set_if(run_flags.temp_opt, run_flags.temperature, i.config.temperature);
    set_if(critic_opt, critic, i.critic);
    p.cfg.validate();
    p.command = "run";
    AtomicDir out(run_out, run_common.force);
    build_pipeline(p, Mode{});
    execute_run(p, Mode{}, out);
    return kExitOk;
  }

  if (*train_cmd) {
    set_log_level(train_common.log_level);
    auto cfg = base_config(train_common);
    auto& t = cfg.train;
    set_if(lr_opt, lr, t.config.learning_rate);
    set_if(epochs_opt, epochs, t.config.epochs);
    set_if(batch_opt, batch, t.config.batch_size);
    set_if(l2_opt, l2, t.config.l2);
    set_if(dim_opt, dimension, t.dimension);
    t.config.seed = cfg.seed;
    cfg.validate();
    AtomicDir out(train_out, train_common.force);
    Pipeline p;
    p.cfg = cfg;
    p.command = "train-critic";
    add_input(p, "pairs", pairs);
    p.run_id = compute_run_id(p.command, config_to_json(cfg), cfg.seed, p.inputs);
    auto manifest = start_manifest(p);
    const auto tuples = load_preferences(pairs);
    const auto result = train(FeatureExtractor::hashed_bow(t.dimension), tuples, t.config);
    result.critic.save(out.path("critic.bin"));
    write_file(out.path("loss_curve.csv"), loss_curve_csv(result.curve));
    const auto& last = result.curve.back();
    write_file(out.path("train_report.json"),
               json{{"tuples", tuples.size()},
                    {"epochs", t.config.epochs},
                    {"initial_loss", result.curve.front().mean_loss},
                    {"final_loss", last.mean_loss},
                    {"final_accuracy", last.accuracy}}
                       .dump(2) +
                   "\n");
    manifest.counts = {{"tuples", static_cast<std::int64_t>(tuples.size())}, {"epochs", t.config.epochs}};
    finish(out, manifest);
    return kExitOk;
  }

  if (*eval_cmd) {
    set_log_level(eval_common.log_level);
    auto cfg = base_config(eval_common);
    AtomicDir out(eval_out, eval_common.force);
    Pipeline p;
    p.cfg = cfg;
    p.command = "eval";
    add_input(p, "results", fs::path(pred) / "results.jsonl");
    add_input(p, "gold", gold);
    p.run_id = compute_run_id(p.command, config_to_json(cfg), cfg.seed, p.inputs);
    auto manifest = start_manifest(p);
    std::vector<RunResult> results;
    for (const auto& row : read_results(pred)) results.push_back(row.get<RunResult>());
    const auto questions = load_questions(gold);
    std::string source_run;
    if (fs::exists(fs::path(pred) / kManifestFile)) source_run = load_manifest(pred).run_id;
    write_metrics(out, results, questions, dataset_id(gold), source_run);
    if (!results.empty()) write_file(out.path("query_stats.json"), json(query_stats(results)).dump(2) + "\n");
    manifest.counts = {{"questions", static_cast<std::int64_t>(questions.size())},
                       {"results", static_cast<std::int64_t>(results.size())}};
    finish(out, manifest);
    return kExitOk;
  }

  if (*report_cmd) {
    set_log_level(report_common.log_level);
    std::vector<MetricReport> reports;
    json rows = json::array();
    std::string csv = "dir,dataset_id,run_id,multiple_choice,questions,em,f1,cem,acc\n";
    for (const auto& dir : report_runs) {
      const auto file = fs::path(dir) / "metrics.json";
      if (!fs::exists(file)) throw Error(ErrorKind::io, "directory has no metrics.json", dir);
      auto r = json::parse(read_file(file)).get<MetricReport>();
      rows.push_back({{"dir", dir},
                      {"dataset_id", r.dataset_id},
                      {"run_id", r.run_id},
                      {"multiple_choice", r.multiple_choice},
                      {"questions", r.per_question.size()},
                      {"em", r.mean_em},
                      {"f1", r.mean_f1},
                      {"cem", r.mean_cem},
                      {"acc", r.mean_acc ? json(*r.mean_acc) : json(nullptr)}});
      csv += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{}\n", dir, r.dataset_id, r.run_id, r.multiple_choice,
                         r.per_question.size(), r.mean_em, r.mean_f1, r.mean_cem,
                         r.mean_acc ? fmt::format("{:.6f}", *r.mean_acc) : std::string());
      reports.push_back(std::move(r));
    }
    const auto avg = aggregate(reports);
    const json report{{"runs", rows}, {"average", {{"em", avg.em}, {"f1", avg.f1}, {"tasks", avg.tasks}}}};
    if (!report_out.empty()) {
      AtomicDir out(report_out, report_common.force);
      Pipeline p;
      p.cfg = base_config(report_common);
      p.command = "report";
      for (const auto& dir : report_runs) add_input(p, "metrics:" + dir, fs::path(dir) / "metrics.json");
      p.run_id = compute_run_id(p.command, config_to_json(p.cfg), p.cfg.seed, p.inputs);
      auto manifest = start_manifest(p);
      write_file(out.path("report.json"), report.dump(2) + "\n");
      write_file(out.path("report.csv"), csv);
      manifest.counts = {{"runs", static_cast<std::int64_t>(reports.size())}};
      write_manifest(out, manifest);
      out.commit();
    }
    std::cout << report.dump(2) << "\n";
    return kExitOk;
  }

  if (*replay_cmd) {
    set_log_level(replay_common.log_level);
    const auto recorded = load_manifest(replay_run);
    if (recorded.command != "run" && recorded.command != "collect") {
      throw Error(ErrorKind::invalid_input, "only run and collect directories can be replayed", recorded.command);
    }
    AtomicDir out(replay_out, replay_common.force);
    Pipeline p;
    p.cfg = parse_config(recorded.config);
    p.command = recorded.command;
    const Mode mode{true, replay_run};
    build_pipeline(p, mode);
    if (recorded.command == "run") execute_run(p, mode, out, &recorded);
    else execute_collect(p, out, &recorded);
    return kExitOk;
  }
  return kExitConfig;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  static const bool logger_ready = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("raggym"));
    return true;
  }();
  (void)logger_ready;
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << dump_line(error_json("config", e.what(), e.context(), e.diagnostics())) << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << dump_line(error_json(to_string(e.kind()), e.what(), e.context())) << "\n";
    return e.kind() == ErrorKind::config ? kExitConfig : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << dump_line(error_json("internal", e.what(), "")) << "\n";
    return kExitFailure;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"raggym"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace raggym
