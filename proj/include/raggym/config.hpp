// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raggym/agents.hpp"
#include "raggym/critic.hpp"
#include "raggym/error.hpp"
#include "raggym/inference.hpp"
#include "raggym/process_data.hpp"
#include "raggym/retrieval.hpp"

/// Global experiment configuration: one JSON file, strictly parsed.
/// Unknown keys and type mismatches are reported per field.
namespace raggym {

struct ConfigDiagnostic {
  std::string field;
  std::string message;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigDiagnostic> diagnostics);
  const std::vector<ConfigDiagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<ConfigDiagnostic> diagnostics_;
};

enum class EndpointKind { mock, openai, replay };

struct EndpointConfig {
  EndpointKind kind = EndpointKind::mock;
  // mock
  std::string script;
  bool strict = true;
  // openai
  HttpEndpoint http;
  std::string model;
  int max_in_flight = 4;
  std::string api_key_env = "RAGGYM_API_KEY";
  // replay
  std::string log;
};

struct AgentSection {
  ArchName arch = ArchName::re2search;
  AgentOptions options;
  std::string prompts_dir;  // empty: built-in templates
};

struct InferenceSection {
  InferenceConfig config;
  std::string critic = "none";  // none | <critic file> | http(s)://<endpoint>
};

struct CollectionSection {
  CollectionConfig config;
  AnnotatorKind annotator = AnnotatorKind::llm;
  int rollouts = 4;
  double rollout_temperature = 0.0;
  int rank_retries = 2;
  std::string human_file;
};

struct TrainSection {
  TrainConfig config;  // config.seed is taken from the root seed
  std::size_t dimension = FeatureExtractor::kDefaultDimension;
};

struct PathsSection {
  std::string dataset;
  std::string corpus;
  std::string index;
};

struct GlobalConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::map<Role, EndpointConfig> endpoints;
  EnvConfig env;
  AgentSection agent;
  InferenceSection inference;
  CollectionSection collection;
  TrainSection train;
  PathsSection paths;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

GlobalConfig parse_config(const json& j);
GlobalConfig load_config(const std::filesystem::path& path);
/// Canonical form: every field explicit.
json config_to_json(const GlobalConfig& c);

}  // namespace raggym
