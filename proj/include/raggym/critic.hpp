// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "raggym/http.hpp"
#include "raggym/mdp.hpp"

/// Process reward model: a scorer r(s, a) trained with the pairwise
/// logistic loss -log σ(r(s, a+) - r(s, a-)).
namespace raggym {

enum class PreferenceSource { llm_annotation, rollout, human_file };
std::string_view to_string(PreferenceSource s);
PreferenceSource parse_preference_source(std::string_view s);

struct PreferenceTuple {
  State state;
  Action preferred;
  Action rejected;
  PreferenceSource source = PreferenceSource::llm_annotation;
  /// State as the acting architecture rendered it; what the critic sees.
  std::string state_text;
  /// Actor prompt for the state and the raw completions behind each action.
  std::string prompt_system;
  std::string prompt_user;
  std::string preferred_raw;
  std::string rejected_raw;

  bool operator==(const PreferenceTuple&) const = default;
};

void to_json(json& j, const PreferenceTuple& t);
void from_json(const json& j, PreferenceTuple& t);

/// Sorted by index, indices unique.
struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  double dot(std::span<const double> dense) const;
  /// this - other
  SparseVector minus(const SparseVector& other) const;
};

enum class FeatureScheme { hashed_bow, endpoint_embedding };

class FeatureExtractor {
 public:
  static constexpr std::size_t kDefaultDimension = std::size_t{1} << 18;

  /// Signed feature hashing of state tokens and action tokens in
  /// separate namespaces, L2-normalized.
  static FeatureExtractor hashed_bow(std::size_t dimension = kDefaultDimension);
  /// Embedding of "<state>\n\n<action>" fetched from an endpoint
  /// (POST {text} -> {embedding: [...]}); `dimension` must match its length.
  static FeatureExtractor endpoint_embedding(HttpEndpoint endpoint, std::size_t dimension);

  FeatureScheme scheme() const { return scheme_; }
  std::size_t dimension() const { return dimension_; }
  const std::optional<HttpEndpoint>& endpoint() const { return endpoint_; }

  SparseVector extract(std::string_view state_text, std::string_view action_text) const;

 private:
  FeatureExtractor(FeatureScheme scheme, std::size_t dimension, std::optional<HttpEndpoint> endpoint);
  FeatureScheme scheme_;
  std::size_t dimension_;
  std::optional<HttpEndpoint> endpoint_;
};

/// Anything that can assign a process reward to (state, action).
class Critic {
 public:
  virtual ~Critic() = default;
  virtual double score(std::string_view state_text, const Action& action) const = 0;
};

class LinearCritic final : public Critic {
 public:
  explicit LinearCritic(FeatureExtractor extractor, std::uint64_t seed = 0);

  double score(std::string_view state_text, const Action& action) const override;
  double score_features(const SparseVector& features) const { return features.dot(weights_) + bias_; }

  const FeatureExtractor& extractor() const { return extractor_; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  void set_bias(double b) { bias_ = b; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  void save(const std::filesystem::path& path) const;
  static LinearCritic load(const std::filesystem::path& path);

 private:
  FeatureExtractor extractor_;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Wire: POST {state_text, action_text} -> {score: number}.
class EndpointCritic final : public Critic {
 public:
  explicit EndpointCritic(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  double score(std::string_view state_text, const Action& action) const override;

 private:
  HttpEndpoint endpoint_;
};

double score(const Critic& critic, std::string_view state_text, const Action& action);

double sigmoid(double x);
/// log σ(x) without overflow for large |x|.
double log_sigmoid(double x);
/// -log σ(gap).
double pairwise_loss_from_gap(double gap);
double pairwise_loss(const Critic& critic, const PreferenceTuple& tuple);

/// Feature difference x(s, a+) - x(s, a-) per tuple.
std::vector<SparseVector> prepare_pairs(const FeatureExtractor& extractor, std::span<const PreferenceTuple> data);

/// mean pairwise loss + (l2 / 2) * ||w||^2
double objective(const LinearCritic& critic, std::span<const SparseVector> pairs, double l2);
/// Dense gradient of objective() with respect to the weights.
std::vector<double> objective_gradient(const LinearCritic& critic, std::span<const SparseVector> pairs, double l2);

struct TrainConfig {
  double learning_rate = 0.5;
  int epochs = 30;
  int batch_size = 32;
  double l2 = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;  // data term only
  double accuracy = 0;
};

struct TrainResult {
  LinearCritic critic;
  /// Entry 0 is the untrained critic; entry e follows epoch e.
  std::vector<EpochStats> curve;
};

/// Plain mini-batch gradient descent from zero weights. Deterministic for
/// a fixed seed.
TrainResult train(const FeatureExtractor& extractor, std::span<const PreferenceTuple> data, const TrainConfig& config);
/// Same, continuing from `initial`.
TrainResult train(LinearCritic initial, std::span<const PreferenceTuple> data, const TrainConfig& config);

/// Fraction of tuples with score(a+) > score(a-); ties count 1/2.
double eval_pairwise_accuracy(const Critic& critic, std::span<const PreferenceTuple> data);

std::string loss_curve_csv(std::span<const EpochStats> curve);

}  // namespace raggym
