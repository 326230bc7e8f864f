// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "raggym/http.hpp"
#include "raggym/util.hpp"

namespace raggym {

struct GenerationConfig {
  double temperature = 0.0;
  int n_samples = 1;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;

  void validate() const;
  bool operator==(const GenerationConfig&) const = default;
};

struct ChatRequest {
  std::string system;
  std::string user;
  GenerationConfig generation;
  bool operator==(const ChatRequest&) const = default;
};

enum class Role { actor, summarizer, annotator };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

void to_json(json& j, const ChatRequest& r);
void from_json(const json& j, ChatRequest& r);

/// Stable hash of (role, system, user, generation config without seed).
std::string request_digest(Role role, const ChatRequest& request);

class Backend {
 public:
  virtual ~Backend() = default;
  /// Must return exactly request.generation.n_samples completions.
  virtual std::vector<std::string> complete(Role role, const ChatRequest& request) = 0;
};

/// Wraps a callable; used for programmatic fixtures.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<std::vector<std::string>(Role, const ChatRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  std::vector<std::string> complete(Role role, const ChatRequest& request) override { return fn_(role, request); }

 private:
  Fn fn_;
};

/// Deterministic scripted mock. Each entry matches either an exact
/// request digest or a set of substrings that must all occur in the
/// rendered prompt (system + user); the first matching entry wins, digest
/// matches taking precedence. Completions are cycled, or drawn with the
/// request seed when an entry is in "sample" mode.
class ScriptedBackend final : public Backend {
 public:
  struct Entry {
    std::optional<Role> role;
    std::optional<std::string> digest;
    std::vector<std::string> contains;
    std::vector<std::string> completions;
    bool sample = false;
  };

  ScriptedBackend(std::vector<Entry> entries, bool strict, std::string fallback = {});
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path, bool strict);

  std::vector<std::string> complete(Role role, const ChatRequest& request) override;

 private:
  std::vector<Entry> entries_;
  bool strict_;
  std::string fallback_;
};

/// OpenAI-compatible /chat/completions client with retries and a cap on
/// in-flight requests.
class OpenAiBackend final : public Backend {
 public:
  struct Options {
    HttpEndpoint endpoint;
    std::string model;
    int max_in_flight = 4;
    std::string api_key_env = "RAGGYM_API_KEY";
  };

  explicit OpenAiBackend(Options options);
  std::vector<std::string> complete(Role role, const ChatRequest& request) override;

 private:
  Options options_;
  std::counting_semaphore<256> in_flight_;
};

struct Exchange {
  std::string digest;
  Role role = Role::actor;
  ChatRequest request;
  std::vector<std::string> completions;
  std::string wall_time;
};

void to_json(json& j, const Exchange& e);
void from_json(const json& j, Exchange& e);

/// Append-only, thread-safe record of every gateway call.
class ExchangeLog {
 public:
  ExchangeLog() = default;
  ExchangeLog(const ExchangeLog& other) : entries_(other.entries()) {}
  ExchangeLog& operator=(const ExchangeLog& other) {
    if (this != &other) {
      auto copy = other.entries();
      std::lock_guard lock(mutex_);
      entries_ = std::move(copy);
    }
    return *this;
  }

  void append(Exchange exchange);
  std::vector<Exchange> entries() const;
  std::size_t size() const;
  void save(const std::filesystem::path& path) const;
  static ExchangeLog load(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::vector<Exchange> entries_;
};

/// Serves completions from a recorded log and never touches the network.
/// Among entries with the request's digest the first unconsumed one with
/// the same seed is preferred, then the first unconsumed one.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const ExchangeLog& log);
  std::vector<std::string> complete(Role role, const ChatRequest& request) override;

 private:
  struct Slot {
    Exchange exchange;
    bool used = false;
  };
  std::mutex mutex_;
  std::map<std::string, std::vector<Slot>> by_digest_;
};

std::vector<std::string> replay(const ExchangeLog& log, Role role, const ChatRequest& request);

/// Routes each role to exactly one backend and logs every call.
class Gateway {
 public:
  void bind(Role role, std::shared_ptr<Backend> backend);
  bool has(Role role) const;
  std::vector<std::string> complete(Role role, const ChatRequest& request);
  const ExchangeLog& log() const { return log_; }

 private:
  std::map<Role, std::shared_ptr<Backend>> backends_;
  ExchangeLog log_;
};

}  // namespace raggym
