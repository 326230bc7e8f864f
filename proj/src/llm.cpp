// SPDX-License-Identifier: Apache-2.0
#include "raggym/llm.hpp"

#include <algorithm>
#include <cstdlib>

#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

void GenerationConfig::validate() const {
  if (temperature < 0) throw Error(ErrorKind::invalid_input, "temperature must be >= 0");
  if (n_samples < 1) throw Error(ErrorKind::invalid_input, "n_samples must be >= 1");
  if (n_samples >= 2 && temperature <= 0) {
    throw Error(ErrorKind::invalid_input, "n_samples >= 2 requires temperature > 0");
  }
  if (max_tokens < 1) throw Error(ErrorKind::invalid_input, "max_tokens must be >= 1");
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::actor: return "actor";
    case Role::summarizer: return "summarizer";
    case Role::annotator: return "annotator";
  }
  return "actor";
}

Role parse_role(std::string_view name) {
  if (name == "actor") return Role::actor;
  if (name == "summarizer") return Role::summarizer;
  if (name == "annotator") return Role::annotator;
  throw Error(ErrorKind::config, "unknown model role '" + std::string(name) + "'");
}

void to_json(json& j, const ChatRequest& r) {
  j = json{{"system", r.system},
           {"user", r.user},
           {"temperature", r.generation.temperature},
           {"n_samples", r.generation.n_samples},
           {"max_tokens", r.generation.max_tokens}};
  j["seed"] = r.generation.seed ? json(*r.generation.seed) : json(nullptr);
}

void from_json(const json& j, ChatRequest& r) {
  r.system = j.at("system").get<std::string>();
  r.user = j.at("user").get<std::string>();
  r.generation.temperature = j.at("temperature").get<double>();
  r.generation.n_samples = j.at("n_samples").get<int>();
  r.generation.max_tokens = j.at("max_tokens").get<int>();
  if (j.contains("seed") && !j.at("seed").is_null()) r.generation.seed = j.at("seed").get<std::uint64_t>();
  else r.generation.seed.reset();
}

std::string request_digest(Role role, const ChatRequest& request) {
  json j = request;
  j.erase("seed");
  j["role"] = to_string(role);
  return sha256_hex(dump_line(j));
}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries, bool strict, std::string fallback)
    : entries_(std::move(entries)), strict_(strict), fallback_(std::move(fallback)) {
  for (const auto& e : entries_) {
    if (e.completions.empty()) throw Error(ErrorKind::config, "mock script entry without completions");
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path, bool strict) {
  std::vector<Entry> entries;
  std::string fallback;
  for (const auto& row : read_jsonl(path)) {
    try {
      if (row.contains("fallback")) {
        fallback = row.at("fallback").get<std::string>();
        continue;
      }
      Entry e;
      if (row.contains("role")) e.role = parse_role(row.at("role").get<std::string>());
      if (row.contains("digest")) e.digest = row.at("digest").get<std::string>();
      e.contains = row.value("contains", std::vector<std::string>{});
      e.completions = row.at("completions").get<std::vector<std::string>>();
      e.sample = row.value("mode", std::string("cycle")) == "sample";
      entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config, std::string("malformed mock script entry: ") + e.what(), path.string());
    }
  }
  return std::make_shared<ScriptedBackend>(std::move(entries), strict, std::move(fallback));
}

std::vector<std::string> ScriptedBackend::complete(Role role, const ChatRequest& request) {
  const std::string digest = request_digest(role, request);
  const std::string prompt = request.system + "\n" + request.user;
  const Entry* match = nullptr;
  for (const auto& e : entries_) {
    if (e.digest && *e.digest == digest) {
      match = &e;
      break;
    }
  }
  if (!match) {
    for (const auto& e : entries_) {
      if (e.digest || (e.role && *e.role != role)) continue;
      const bool all = std::all_of(e.contains.begin(), e.contains.end(),
                                   [&](const std::string& s) { return prompt.find(s) != std::string::npos; });
      if (all) {
        match = &e;
        break;
      }
    }
  }
  const int n = request.generation.n_samples;
  if (!match) {
    if (strict_) throw Error(ErrorKind::gateway, "mock script has no entry for request", digest);
    return std::vector<std::string>(static_cast<std::size_t>(n), fallback_);
  }
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  if (match->sample && request.generation.temperature > 0) {
    Rng rng(request.generation.seed.value_or(0));
    for (int i = 0; i < n; ++i) out.push_back(match->completions[rng.below(match->completions.size())]);
  } else {
    for (int i = 0; i < n; ++i) out.push_back(match->completions[static_cast<std::size_t>(i) % match->completions.size()]);
  }
  return out;
}

OpenAiBackend::OpenAiBackend(Options options)
    : options_(std::move(options)), in_flight_(std::clamp(options_.max_in_flight, 1, 256)) {}

std::vector<std::string> OpenAiBackend::complete(Role role, const ChatRequest& request) {
  const std::string digest = request_digest(role, request);
  HttpEndpoint endpoint = options_.endpoint;
  if (const char* key = std::getenv(options_.api_key_env.c_str()); key && *key) {
    endpoint.headers["Authorization"] = std::string("Bearer ") + key;
  }
  std::vector<std::string> out;
  const int n = request.generation.n_samples;
  int round = 0;
  while (static_cast<int>(out.size()) < n) {
    json messages = json::array();
    if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
    messages.push_back({{"role", "user"}, {"content", request.user}});
    json body{{"model", options_.model},
              {"messages", messages},
              {"temperature", request.generation.temperature},
              {"n", n - static_cast<int>(out.size())},
              {"max_tokens", request.generation.max_tokens}};
    if (request.generation.seed) body["seed"] = *request.generation.seed + static_cast<std::uint64_t>(round);
    json reply;
    in_flight_.acquire();
    try {
      reply = post_json(endpoint, "/chat/completions", body);
    } catch (const Error& e) {
      in_flight_.release();
      throw Error(ErrorKind::gateway, e.what(), digest);
    }
    in_flight_.release();
    try {
      auto choices = reply.at("choices");
      std::vector<std::pair<int, std::string>> indexed;
      for (const auto& c : choices) {
        indexed.emplace_back(c.value("index", static_cast<int>(indexed.size())),
                             c.at("message").value("content", std::string()));
      }
      std::stable_sort(indexed.begin(), indexed.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      if (indexed.empty()) throw Error(ErrorKind::gateway, "completion reply without choices", digest);
      for (auto& [_, text] : indexed) {
        if (static_cast<int>(out.size()) < n) out.push_back(std::move(text));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::gateway, std::string("malformed completion reply: ") + e.what(), digest);
    }
    ++round;
  }
  return out;
}

void to_json(json& j, const Exchange& e) {
  j = json{{"digest", e.digest},
           {"role", to_string(e.role)},
           {"request", e.request},
           {"completions", e.completions},
           {"wall_time", e.wall_time}};
}

void from_json(const json& j, Exchange& e) {
  e.digest = j.at("digest").get<std::string>();
  e.role = parse_role(j.at("role").get<std::string>());
  e.request = j.at("request").get<ChatRequest>();
  e.completions = j.at("completions").get<std::vector<std::string>>();
  e.wall_time = j.value("wall_time", std::string());
}

void ExchangeLog::append(Exchange exchange) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(exchange));
}

std::vector<Exchange> ExchangeLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t ExchangeLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ExchangeLog::save(const std::filesystem::path& path) const {
  std::vector<json> rows;
  for (const auto& e : entries()) rows.emplace_back(e);
  write_jsonl(path, rows);
}

ExchangeLog ExchangeLog::load(const std::filesystem::path& path) {
  ExchangeLog log;
  for (const auto& row : read_jsonl(path)) {
    try {
      log.append(row.get<Exchange>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::io, std::string("malformed exchange record: ") + e.what(), path.string());
    }
  }
  return log;
}

ReplayBackend::ReplayBackend(const ExchangeLog& log) {
  for (auto& e : log.entries()) by_digest_[e.digest].push_back(Slot{std::move(e), false});
}

std::vector<std::string> ReplayBackend::complete(Role role, const ChatRequest& request) {
  const std::string digest = request_digest(role, request);
  std::lock_guard lock(mutex_);
  auto it = by_digest_.find(digest);
  if (it == by_digest_.end()) throw Error(ErrorKind::replay_miss, "request digest not found in exchange log", digest);
  Slot* pick = nullptr;
  for (auto& slot : it->second) {
    if (!slot.used && slot.exchange.request.generation.seed == request.generation.seed) {
      pick = &slot;
      break;
    }
  }
  if (!pick) {
    for (auto& slot : it->second) {
      if (!slot.used) {
        pick = &slot;
        break;
      }
    }
  }
  if (!pick) throw Error(ErrorKind::replay_miss, "exchange log exhausted for request digest", digest);
  pick->used = true;
  return pick->exchange.completions;
}

std::vector<std::string> replay(const ExchangeLog& log, Role role, const ChatRequest& request) {
  ReplayBackend backend(log);
  return backend.complete(role, request);
}

void Gateway::bind(Role role, std::shared_ptr<Backend> backend) {
  if (!backend) throw Error(ErrorKind::config, "null backend for role " + std::string(to_string(role)));
  if (backends_.count(role)) throw Error(ErrorKind::config, "role already bound: " + std::string(to_string(role)));
  backends_[role] = std::move(backend);
}

bool Gateway::has(Role role) const { return backends_.count(role) > 0; }

std::vector<std::string> Gateway::complete(Role role, const ChatRequest& request) {
  if (trim(request.user).empty()) throw Error(ErrorKind::invalid_input, "chat request with empty user message");
  request.generation.validate();
  auto it = backends_.find(role);
  if (it == backends_.end()) throw Error(ErrorKind::config, "no backend bound for role " + std::string(to_string(role)));
  auto completions = it->second->complete(role, request);
  const std::string digest = request_digest(role, request);
  if (static_cast<int>(completions.size()) != request.generation.n_samples) {
    throw Error(ErrorKind::gateway,
                "backend returned " + std::to_string(completions.size()) + " completions, expected " +
                    std::to_string(request.generation.n_samples),
                digest);
  }
  log_.append(Exchange{digest, role, request, completions, utc_timestamp()});
  return completions;
}

}  // namespace raggym
