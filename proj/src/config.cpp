// SPDX-License-Identifier: Apache-2.0
#include "raggym/config.hpp"

#include <algorithm>
#include <initializer_list>

#include <fmt/format.h>

namespace raggym {

namespace {

std::string summarize(const std::vector<ConfigDiagnostic>& diags) {
  std::string out = "invalid configuration";
  for (const auto& d : diags) out += "; " + d.field + ": " + d.message;
  return out;
}

std::string join_path(std::string_view parent, std::string_view key) {
  return parent.empty() ? std::string(key) : std::string(parent) + "." + std::string(key);
}

class Reader {
 public:
  std::vector<ConfigDiagnostic> diags;

  void fail(std::string field, std::string message) { diags.push_back({std::move(field), std::move(message)}); }

  /// False (with a diagnostic) when `j` is not an object.
  bool object(const json& j, std::string_view path, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
      fail(path.empty() ? "<root>" : std::string(path), "expected an object");
      return false;
    }
    for (const auto& [key, _] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(join_path(path, key), "unknown key");
    }
    return true;
  }

  template <class T>
  void field(const json& obj, std::string_view path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!type_ok<T>(v)) {
      fail(join_path(path, key), std::string("expected ") + type_name<T>() + ", got " + v.type_name());
      return;
    }
    out = v.get<T>();
  }

 private:
  template <class T>
  static bool type_ok(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_unsigned_v<T>) {
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_integral_v<T>) {
      return v.is_number_integer();
    } else {
      return v.is_object();
    }
  }

  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) {
      return "a boolean";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return "a string";
    } else if constexpr (std::is_floating_point_v<T>) {
      return "a number";
    } else if constexpr (std::is_unsigned_v<T>) {
      return "a non-negative integer";
    } else if constexpr (std::is_integral_v<T>) {
      return "an integer";
    } else {
      return "an object";
    }
  }
};

template <class Fn>
void check(Reader& r, std::string_view field, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    r.fail(std::string(field), e.what());
  }
}

void read_http(Reader& r, const json& j, const std::string& path, HttpEndpoint& e) {
  r.field(j, path, "url", e.url);
  r.field(j, path, "timeout_ms", e.timeout_ms);
  r.field(j, path, "max_retries", e.max_retries);
  r.field(j, path, "initial_backoff_ms", e.initial_backoff_ms);
  r.field(j, path, "backoff_factor", e.backoff_factor);
  if (j.contains("headers")) {
    const auto& h = j.at("headers");
    if (!h.is_object()) {
      r.fail(path + ".headers", "expected an object");
    } else {
      for (const auto& [k, v] : h.items()) {
        if (!v.is_string()) r.fail(path + ".headers." + k, "expected a string");
        else e.headers[k] = v.get<std::string>();
      }
    }
  }
  if (e.url.empty()) r.fail(path + ".url", "required");
}

EndpointConfig read_endpoint(Reader& r, const json& j, const std::string& path) {
  EndpointConfig e;
  if (!j.is_object()) {
    r.fail(path, "expected an object");
    return e;
  }
  std::string kind = "mock";
  r.field(j, path, "kind", kind);
  if (kind == "mock") {
    e.kind = EndpointKind::mock;
    r.object(j, path, {"kind", "script", "strict"});
    r.field(j, path, "script", e.script);
    r.field(j, path, "strict", e.strict);
    if (e.script.empty()) r.fail(path + ".script", "required for a mock endpoint");
  } else if (kind == "openai") {
    e.kind = EndpointKind::openai;
    r.object(j, path,
             {"kind", "url", "model", "timeout_ms", "max_retries", "initial_backoff_ms", "backoff_factor", "headers",
              "max_in_flight", "api_key_env"});
    read_http(r, j, path, e.http);
    r.field(j, path, "model", e.model);
    r.field(j, path, "max_in_flight", e.max_in_flight);
    r.field(j, path, "api_key_env", e.api_key_env);
    if (e.model.empty()) r.fail(path + ".model", "required for an openai endpoint");
    if (e.max_in_flight < 1) r.fail(path + ".max_in_flight", "must be >= 1");
  } else if (kind == "replay") {
    e.kind = EndpointKind::replay;
    r.object(j, path, {"kind", "log"});
    r.field(j, path, "log", e.log);
    if (e.log.empty()) r.fail(path + ".log", "required for a replay endpoint");
  } else {
    r.fail(path + ".kind", "must be mock|openai|replay");
  }
  return e;
}

json endpoint_json(const EndpointConfig& e) {
  switch (e.kind) {
    case EndpointKind::mock: return json{{"kind", "mock"}, {"script", e.script}, {"strict", e.strict}};
    case EndpointKind::openai: {
      json j = e.http;
      j["kind"] = "openai";
      j["model"] = e.model;
      j["max_in_flight"] = e.max_in_flight;
      j["api_key_env"] = e.api_key_env;
      return j;
    }
    case EndpointKind::replay: return json{{"kind", "replay"}, {"log", e.log}};
  }
  return json::object();
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigDiagnostic> diagnostics)
    : Error(ErrorKind::config, summarize(diagnostics), diagnostics.empty() ? "" : diagnostics.front().field),
      diagnostics_(std::move(diagnostics)) {}

GlobalConfig parse_config(const json& j) {
  Reader r;
  GlobalConfig c;
  if (!r.object(j, "", {"seed", "jobs", "endpoints", "env", "agent", "inference", "collection", "train", "paths"})) {
    throw ConfigError(std::move(r.diags));
  }
  r.field(j, "", "seed", c.seed);
  r.field(j, "", "jobs", c.jobs);

  if (j.contains("endpoints") && r.object(j.at("endpoints"), "endpoints", {"actor", "summarizer", "annotator"})) {
    for (const auto& [role, ej] : j.at("endpoints").items()) {
      if (role != "actor" && role != "summarizer" && role != "annotator") continue;
      c.endpoints[parse_role(role)] = read_endpoint(r, ej, "endpoints." + role);
    }
  }

  if (j.contains("env")) {
    const auto& e = j.at("env");
    if (r.object(e, "env", {"top_k", "rrf_k", "bm25_k1", "bm25_b", "fusion_pool_factor", "dense_endpoint",
                            "dense_failure"})) {
      r.field(e, "env", "top_k", c.env.top_k);
      r.field(e, "env", "rrf_k", c.env.rrf_k);
      r.field(e, "env", "bm25_k1", c.env.bm25_k1);
      r.field(e, "env", "bm25_b", c.env.bm25_b);
      r.field(e, "env", "fusion_pool_factor", c.env.fusion_pool_factor);
      std::string policy = "degrade";
      r.field(e, "env", "dense_failure", policy);
      if (policy == "fail") c.env.dense_failure = DenseFailurePolicy::fail_episode;
      else if (policy != "degrade") r.fail("env.dense_failure", "must be degrade|fail");
      if (e.contains("dense_endpoint") && !e.at("dense_endpoint").is_null()) {
        const auto& d = e.at("dense_endpoint");
        if (r.object(d, "env.dense_endpoint",
                     {"url", "timeout_ms", "max_retries", "initial_backoff_ms", "backoff_factor", "headers"})) {
          HttpEndpoint http;
          read_http(r, d, "env.dense_endpoint", http);
          c.env.dense_endpoint = http;
        }
      }
    }
  }

  if (j.contains("agent")) {
    const auto& a = j.at("agent");
    if (r.object(a, "agent", {"arch", "doc_char_budget", "max_repairs", "max_tokens", "prompts_dir"})) {
      std::string arch(to_string(c.agent.arch));
      r.field(a, "agent", "arch", arch);
      check(r, "agent.arch", [&] { c.agent.arch = parse_arch(arch); });
      r.field(a, "agent", "doc_char_budget", c.agent.options.doc_char_budget);
      r.field(a, "agent", "max_repairs", c.agent.options.max_repairs);
      r.field(a, "agent", "max_tokens", c.agent.options.max_tokens);
      r.field(a, "agent", "prompts_dir", c.agent.prompts_dir);
    }
  }

  if (j.contains("inference")) {
    const auto& i = j.at("inference");
    if (r.object(i, "inference", {"n_candidates", "max_steps", "temperature", "force_answer_at_cap", "critic"})) {
      r.field(i, "inference", "n_candidates", c.inference.config.n_candidates);
      r.field(i, "inference", "max_steps", c.inference.config.max_steps);
      r.field(i, "inference", "temperature", c.inference.config.temperature);
      r.field(i, "inference", "force_answer_at_cap", c.inference.config.force_answer_at_cap);
      r.field(i, "inference", "critic", c.inference.critic);
    }
  }

  if (j.contains("collection")) {
    const auto& k = j.at("collection");
    if (r.object(k, "collection", {"n_candidates", "max_steps", "temperature", "pairing", "annotator", "rollouts",
                                   "rollout_temperature", "rank_retries", "human_file"})) {
      r.field(k, "collection", "n_candidates", c.collection.config.n_candidates);
      r.field(k, "collection", "max_steps", c.collection.config.max_steps);
      r.field(k, "collection", "temperature", c.collection.config.temperature);
      std::string pairing(to_string(c.collection.config.pairing));
      r.field(k, "collection", "pairing", pairing);
      check(r, "collection.pairing", [&] { c.collection.config.pairing = parse_pairing(pairing); });
      std::string annotator(to_string(c.collection.annotator));
      r.field(k, "collection", "annotator", annotator);
      check(r, "collection.annotator", [&] { c.collection.annotator = parse_annotator_kind(annotator); });
      r.field(k, "collection", "rollouts", c.collection.rollouts);
      r.field(k, "collection", "rollout_temperature", c.collection.rollout_temperature);
      r.field(k, "collection", "rank_retries", c.collection.rank_retries);
      r.field(k, "collection", "human_file", c.collection.human_file);
    }
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (r.object(t, "train", {"learning_rate", "epochs", "batch_size", "l2", "dimension"})) {
      r.field(t, "train", "learning_rate", c.train.config.learning_rate);
      r.field(t, "train", "epochs", c.train.config.epochs);
      r.field(t, "train", "batch_size", c.train.config.batch_size);
      r.field(t, "train", "l2", c.train.config.l2);
      r.field(t, "train", "dimension", c.train.dimension);
    }
  }

  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    if (r.object(p, "paths", {"dataset", "corpus", "index"})) {
      r.field(p, "paths", "dataset", c.paths.dataset);
      r.field(p, "paths", "corpus", c.paths.corpus);
      r.field(p, "paths", "index", c.paths.index);
    }
  }

  if (!r.diags.empty()) throw ConfigError(std::move(r.diags));
  c.validate();
  return c;
}

void GlobalConfig::validate() const {
  Reader r;
  if (jobs < 1) r.fail("jobs", "must be >= 1");
  check(r, "env", [&] { env.validate(); });
  check(r, "inference", [&] { inference.config.validate(); });
  check(r, "collection", [&] { collection.config.validate(); });
  check(r, "train", [&] { train.config.validate(); });
  if (train.dimension == 0) r.fail("train.dimension", "must be positive");
  if (agent.options.max_repairs < 0) r.fail("agent.max_repairs", "must be >= 0");
  if (agent.options.max_tokens < 1) r.fail("agent.max_tokens", "must be >= 1");
  if (collection.rollouts < 1) r.fail("collection.rollouts", "must be >= 1");
  if (collection.rank_retries < 0) r.fail("collection.rank_retries", "must be >= 0");
  if (collection.rollout_temperature < 0) r.fail("collection.rollout_temperature", "must be >= 0");
  if (!r.diags.empty()) throw ConfigError(std::move(r.diags));
}

GlobalConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::vector<ConfigDiagnostic>{{"<file>", fmt::format("{}: {}", path.string(), e.what())}});
  }
  return parse_config(j);
}

json config_to_json(const GlobalConfig& c) {
  json endpoints = json::object();
  for (const auto& [role, e] : c.endpoints) endpoints[std::string(to_string(role))] = endpoint_json(e);
  return json{
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"endpoints", endpoints},
      {"env", c.env},
      {"agent",
       {{"arch", to_string(c.agent.arch)},
        {"doc_char_budget", c.agent.options.doc_char_budget},
        {"max_repairs", c.agent.options.max_repairs},
        {"max_tokens", c.agent.options.max_tokens},
        {"prompts_dir", c.agent.prompts_dir}}},
      {"inference",
       {{"n_candidates", c.inference.config.n_candidates},
        {"max_steps", c.inference.config.max_steps},
        {"temperature", c.inference.config.temperature},
        {"force_answer_at_cap", c.inference.config.force_answer_at_cap},
        {"critic", c.inference.critic}}},
      {"collection",
       {{"n_candidates", c.collection.config.n_candidates},
        {"max_steps", c.collection.config.max_steps},
        {"temperature", c.collection.config.temperature},
        {"pairing", to_string(c.collection.config.pairing)},
        {"annotator", to_string(c.collection.annotator)},
        {"rollouts", c.collection.rollouts},
        {"rollout_temperature", c.collection.rollout_temperature},
        {"rank_retries", c.collection.rank_retries},
        {"human_file", c.collection.human_file}}},
      {"train",
       {{"learning_rate", c.train.config.learning_rate},
        {"epochs", c.train.config.epochs},
        {"batch_size", c.train.config.batch_size},
        {"l2", c.train.config.l2},
        {"dimension", c.train.dimension}}},
      {"paths", {{"dataset", c.paths.dataset}, {"corpus", c.paths.corpus}, {"index", c.paths.index}}}};
}

}  // namespace raggym
