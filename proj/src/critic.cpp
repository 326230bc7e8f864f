// SPDX-License-Identifier: Apache-2.0
#include "raggym/critic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "raggym/error.hpp"
#include "raggym/retrieval.hpp"

namespace raggym {

std::string_view to_string(PreferenceSource s) {
  switch (s) {
    case PreferenceSource::llm_annotation: return "llm_annotation";
    case PreferenceSource::rollout: return "rollout";
    case PreferenceSource::human_file: return "human_file";
  }
  return "llm_annotation";
}

PreferenceSource parse_preference_source(std::string_view s) {
  if (s == "llm_annotation") return PreferenceSource::llm_annotation;
  if (s == "rollout") return PreferenceSource::rollout;
  if (s == "human_file") return PreferenceSource::human_file;
  throw Error(ErrorKind::invalid_input, "unknown preference source '" + std::string(s) + "'");
}

void to_json(json& j, const PreferenceTuple& t) {
  j = json{{"schema", "raggym.preference.v1"},
           {"state", t.state},
           {"preferred", t.preferred},
           {"rejected", t.rejected},
           {"source", to_string(t.source)},
           {"state_text", t.state_text},
           {"prompt_system", t.prompt_system},
           {"prompt_user", t.prompt_user},
           {"preferred_raw", t.preferred_raw},
           {"rejected_raw", t.rejected_raw}};
}

void from_json(const json& j, PreferenceTuple& t) {
  t.state = j.at("state").get<State>();
  t.preferred = j.at("preferred").get<Action>();
  t.rejected = j.at("rejected").get<Action>();
  t.source = parse_preference_source(j.at("source").get<std::string>());
  t.state_text = j.at("state_text").get<std::string>();
  t.prompt_system = j.value("prompt_system", std::string());
  t.prompt_user = j.value("prompt_user", std::string());
  t.preferred_raw = j.value("preferred_raw", std::string());
  t.rejected_raw = j.value("rejected_raw", std::string());
  if (trim(t.preferred.payload) == trim(t.rejected.payload) && t.preferred.kind == t.rejected.kind) {
    throw Error(ErrorKind::invalid_input, "preference tuple with identical actions");
  }
}

double SparseVector::dot(std::span<const double> dense) const {
  double s = 0;
  for (const auto& [i, v] : entries) s += dense[i] * v;
  return s;
}

SparseVector SparseVector::minus(const SparseVector& other) const {
  SparseVector out;
  std::size_t a = 0, b = 0;
  while (a < entries.size() || b < other.entries.size()) {
    if (b == other.entries.size() || (a < entries.size() && entries[a].first < other.entries[b].first)) {
      out.entries.push_back(entries[a++]);
    } else if (a == entries.size() || other.entries[b].first < entries[a].first) {
      out.entries.emplace_back(other.entries[b].first, -other.entries[b].second);
      ++b;
    } else {
      const double v = entries[a].second - other.entries[b].second;
      if (v != 0.0) out.entries.emplace_back(entries[a].first, v);
      ++a, ++b;
    }
  }
  return out;
}

FeatureExtractor::FeatureExtractor(FeatureScheme scheme, std::size_t dimension, std::optional<HttpEndpoint> endpoint)
    : scheme_(scheme), dimension_(dimension), endpoint_(std::move(endpoint)) {
  if (dimension_ == 0) throw Error(ErrorKind::invalid_input, "feature dimension must be positive");
}

FeatureExtractor FeatureExtractor::hashed_bow(std::size_t dimension) {
  return FeatureExtractor(FeatureScheme::hashed_bow, dimension, std::nullopt);
}

FeatureExtractor FeatureExtractor::endpoint_embedding(HttpEndpoint endpoint, std::size_t dimension) {
  return FeatureExtractor(FeatureScheme::endpoint_embedding, dimension, std::move(endpoint));
}

SparseVector FeatureExtractor::extract(std::string_view state_text, std::string_view action_text) const {
  SparseVector out;
  if (scheme_ == FeatureScheme::endpoint_embedding) {
    const std::string text = std::string(state_text) + "\n\n" + std::string(action_text);
    const json reply = post_json(*endpoint_, "", json{{"text", text}});
    std::vector<double> embedding;
    try {
      embedding = reply.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::scoring, std::string("malformed embedding reply: ") + e.what(), endpoint_->url);
    }
    if (embedding.size() != dimension_) {
      throw Error(ErrorKind::scoring, fmt::format("embedding has {} dims, expected {}", embedding.size(), dimension_));
    }
    for (std::uint32_t i = 0; i < embedding.size(); ++i) {
      if (embedding[i] != 0.0) out.entries.emplace_back(i, embedding[i]);
    }
    return out;
  }

  std::map<std::uint32_t, double> acc;
  auto add = [&](std::string_view ns, const std::string& token) {
    const std::uint64_t h = fnv1a64(token, fnv1a64(ns));
    const auto index = static_cast<std::uint32_t>(h % dimension_);
    acc[index] += (h >> 63) ? -1.0 : 1.0;
  };
  for (const auto& t : tokenize(state_text)) add("s:", t);
  const auto sep = action_text.find(':');
  const std::string kind = sep == std::string_view::npos ? std::string() : std::string(action_text.substr(0, sep));
  add("k:", kind);
  for (const auto& t : tokenize(sep == std::string_view::npos ? action_text : action_text.substr(sep + 1))) {
    add("a:", t);
  }
  double norm = 0;
  for (const auto& [_, v] : acc) norm += v * v;
  norm = std::sqrt(norm);
  for (const auto& [i, v] : acc) {
    if (v != 0.0) out.entries.emplace_back(i, v / norm);
  }
  return out;
}

LinearCritic::LinearCritic(FeatureExtractor extractor, std::uint64_t seed)
    : extractor_(std::move(extractor)), weights_(extractor_.dimension(), 0.0), seed_(seed) {}

double LinearCritic::score(std::string_view state_text, const Action& action) const {
  return score_features(extractor_.extract(state_text, action_text(action)));
}

namespace {

constexpr char kCriticMagic[8] = {'R', 'G', 'C', 'R', 'I', 'T', 'I', 'C'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw Error(ErrorKind::io, "truncated critic file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace

void LinearCritic::save(const std::filesystem::path& path) const {
  json header{{"schema", "raggym.critic.v1"},
              {"scheme", extractor_.scheme() == FeatureScheme::hashed_bow ? "hashed_bow" : "endpoint_embedding"},
              {"dimension", extractor_.dimension()},
              {"seed", seed_},
              {"bias", bias_}};
  if (extractor_.endpoint()) header["endpoint"] = *extractor_.endpoint();
  const std::string header_text = header.dump();
  std::string out(kCriticMagic, sizeof(kCriticMagic));
  put_u64(out, header_text.size());
  out += header_text;
  for (double w : weights_) put_u64(out, std::bit_cast<std::uint64_t>(w));
  write_file(path, out);
}

LinearCritic LinearCritic::load(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.size() < 16 || data.compare(0, 8, std::string(kCriticMagic, 8)) != 0) {
    throw Error(ErrorKind::io, "not a critic file", path.string());
  }
  std::size_t pos = 8;
  const auto header_len = get_u64(data, pos);
  if (pos + header_len > data.size()) throw Error(ErrorKind::io, "truncated critic header", path.string());
  json header;
  try {
    header = json::parse(data.substr(pos, header_len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::io, std::string("malformed critic header: ") + e.what(), path.string());
  }
  pos += header_len;
  const auto dimension = header.at("dimension").get<std::size_t>();
  const auto scheme = header.at("scheme").get<std::string>();
  FeatureExtractor extractor = scheme == "hashed_bow"
                                   ? FeatureExtractor::hashed_bow(dimension)
                                   : FeatureExtractor::endpoint_embedding(header.at("endpoint").get<HttpEndpoint>(), dimension);
  LinearCritic critic(std::move(extractor), header.value("seed", std::uint64_t{0}));
  critic.bias_ = header.value("bias", 0.0);
  if (data.size() - pos != dimension * 8) throw Error(ErrorKind::io, "critic weight payload has wrong size", path.string());
  for (std::size_t i = 0; i < dimension; ++i) {
    critic.weights_[i] = std::bit_cast<double>(get_u64(data, pos));
    if (!std::isfinite(critic.weights_[i])) throw Error(ErrorKind::io, "critic file holds non-finite weights", path.string());
  }
  return critic;
}

double EndpointCritic::score(std::string_view state_text, const Action& action) const {
  json reply;
  try {
    reply = post_json(endpoint_, "", json{{"state_text", std::string(state_text)}, {"action_text", action_text(action)}});
  } catch (const Error& e) {
    throw Error(ErrorKind::scoring, std::string("critic endpoint failed: ") + e.what(), endpoint_.url);
  }
  if (!reply.contains("score") || !reply.at("score").is_number()) {
    throw Error(ErrorKind::scoring, "critic endpoint reply lacks a numeric score", endpoint_.url);
  }
  const double s = reply.at("score").get<double>();
  if (!std::isfinite(s)) throw Error(ErrorKind::scoring, "critic endpoint returned a non-finite score", endpoint_.url);
  return s;
}

double score(const Critic& critic, std::string_view state_text, const Action& action) {
  return critic.score(state_text, action);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double pairwise_loss_from_gap(double gap) { return -log_sigmoid(gap); }

double pairwise_loss(const Critic& critic, const PreferenceTuple& tuple) {
  return pairwise_loss_from_gap(critic.score(tuple.state_text, tuple.preferred) -
                                critic.score(tuple.state_text, tuple.rejected));
}

std::vector<SparseVector> prepare_pairs(const FeatureExtractor& extractor, std::span<const PreferenceTuple> data) {
  std::vector<SparseVector> pairs;
  pairs.reserve(data.size());
  for (const auto& t : data) {
    const auto plus = extractor.extract(t.state_text, action_text(t.preferred));
    const auto minus = extractor.extract(t.state_text, action_text(t.rejected));
    pairs.push_back(plus.minus(minus));
  }
  return pairs;
}

namespace {

double squared_norm(std::span<const double> w) {
  return std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
}

double mean_loss(const LinearCritic& critic, std::span<const SparseVector> pairs, double* accuracy = nullptr) {
  // Running mean: exact when every term is equal (ln 2 for a zero critic).
  double loss = 0;
  double correct = 0;
  std::size_t k = 0;
  for (const auto& d : pairs) {
    const double gap = d.dot(critic.weights());
    loss += (pairwise_loss_from_gap(gap) - loss) / static_cast<double>(++k);
    correct += gap > 0 ? 1.0 : (gap == 0 ? 0.5 : 0.0);
  }
  if (accuracy) *accuracy = pairs.empty() ? 0.0 : correct / static_cast<double>(pairs.size());
  return loss;
}

}  // namespace

double objective(const LinearCritic& critic, std::span<const SparseVector> pairs, double l2) {
  return mean_loss(critic, pairs) + 0.5 * l2 * squared_norm(critic.weights());
}

std::vector<double> objective_gradient(const LinearCritic& critic, std::span<const SparseVector> pairs, double l2) {
  const auto& w = critic.weights();
  std::vector<double> grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) grad[i] = l2 * w[i];
  const double inv_n = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
  for (const auto& d : pairs) {
    // d/dw -log σ(w·d) = -σ(-w·d) d
    const double coef = -sigmoid(-d.dot(w)) * inv_n;
    for (const auto& [i, v] : d.entries) grad[i] += coef * v;
  }
  return grad;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::invalid_input, "learning_rate must be finite and >= 0");
  }
  if (epochs < 1) throw Error(ErrorKind::invalid_input, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::invalid_input, "batch_size must be >= 1");
  if (l2 < 0) throw Error(ErrorKind::invalid_input, "l2 must be >= 0");
}

TrainResult train(const FeatureExtractor& extractor, std::span<const PreferenceTuple> data, const TrainConfig& config) {
  return train(LinearCritic(extractor, config.seed), data, config);
}

TrainResult train(LinearCritic critic, std::span<const PreferenceTuple> data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw Error(ErrorKind::invalid_input, "training needs a non-empty dataset");
  critic.set_seed(config.seed);
  const auto pairs = prepare_pairs(critic.extractor(), data);

  TrainResult result{critic, {}};
  auto record = [&](int epoch) {
    EpochStats s;
    s.epoch = epoch;
    s.mean_loss = mean_loss(result.critic, pairs, &s.accuracy);
    if (!std::isfinite(s.mean_loss)) {
      throw Error(ErrorKind::training, fmt::format("non-finite training loss after epoch {} (learning_rate={}, l2={})",
                                                   epoch, config.learning_rate, config.l2));
    }
    result.curve.push_back(s);
  };
  record(0);
  if (config.learning_rate == 0.0) {
    for (int e = 1; e <= config.epochs; ++e) record(e);
    return result;
  }

  auto& w = result.critic.weights();
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "epoch/" + std::to_string(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = config.learning_rate / static_cast<double>(end - start);
      // Gradient coefficients use the pre-update weights of this batch.
      std::vector<double> coefs(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const double gap = pairs[order[k]].dot(w);
        if (!std::isfinite(gap)) {
          throw Error(ErrorKind::training, fmt::format("non-finite score gap at epoch {} (learning_rate={})", epoch,
                                                       config.learning_rate));
        }
        coefs[k - start] = sigmoid(-gap);
      }
      if (config.l2 > 0) {
        const double shrink = 1.0 - config.learning_rate * config.l2;
        for (double& x : w) x *= shrink;
      }
      for (std::size_t k = start; k < end; ++k) {
        const double step = scale * coefs[k - start];
        for (const auto& [i, v] : pairs[order[k]].entries) w[i] += step * v;
      }
    }
    record(epoch);
  }
  return result;
}

double eval_pairwise_accuracy(const Critic& critic, std::span<const PreferenceTuple> data) {
  if (data.empty()) throw Error(ErrorKind::invalid_input, "accuracy needs a non-empty dataset");
  double correct = 0;
  for (const auto& t : data) {
    const double plus = critic.score(t.state_text, t.preferred);
    const double minus = critic.score(t.state_text, t.rejected);
    correct += plus > minus ? 1.0 : (plus == minus ? 0.5 : 0.0);
  }
  return correct / static_cast<double>(data.size());
}

std::string loss_curve_csv(std::span<const EpochStats> curve) {
  std::string out = "epoch,mean_loss,accuracy\n";
  for (const auto& s : curve) out += fmt::format("{},{:.12g},{:.6f}\n", s.epoch, s.mean_loss, s.accuracy);
  return out;
}

}  // namespace raggym
