// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "raggym/http.hpp"
#include "raggym/mdp.hpp"

namespace raggym {

struct CorpusDocument {
  std::string doc_id;
  std::string title;
  std::string text;
  bool operator==(const CorpusDocument&) const = default;
};

void to_json(json& j, const CorpusDocument& d);
void from_json(const json& j, CorpusDocument& d);
std::vector<CorpusDocument> load_corpus(const std::filesystem::path& jsonl);

/// Lowercased maximal runs of ASCII alphanumerics.
std::vector<std::string> tokenize(std::string_view text);

struct Posting {
  std::uint32_t doc;  // index into LexicalIndex::documents
  std::uint32_t tf;
  bool operator==(const Posting&) const = default;
};

struct LexicalIndex {
  std::vector<CorpusDocument> documents;
  std::unordered_map<std::string, std::vector<Posting>> postings;
  std::vector<std::uint32_t> doc_lengths;
  std::unordered_map<std::string, std::uint32_t> id_to_doc;
  std::size_t doc_count = 0;
  double avg_doc_length = 0.0;
};

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

/// Scores non-increasing, ties by doc_id ascending, doc ids unique.
using RankedList = std::vector<RankedEntry>;

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

LexicalIndex ingest_corpus(std::span<const CorpusDocument> documents);

RankedList bm25_search(const LexicalIndex& index, std::string_view query, int top_k,
                       Bm25Params params = {});

/// Reciprocal rank fusion: score(d) = sum over lists containing d of
/// 1 / (rrf_k + rank), rank starting at 1.
RankedList rrf_fuse(std::span<const RankedList> lists, double rrf_k, int top_k);

void save_index(const LexicalIndex& index, const std::filesystem::path& file);
LexicalIndex load_index(const std::filesystem::path& file);

class DenseRetriever {
 public:
  virtual ~DenseRetriever() = default;
  virtual RankedList search(std::string_view query, int top_k) = 0;
};

/// Wire: POST {query, top_k} -> {entries: [{doc_id, score}]}.
class HttpDenseRetriever final : public DenseRetriever {
 public:
  explicit HttpDenseRetriever(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  RankedList search(std::string_view query, int top_k) override;

 private:
  HttpEndpoint endpoint_;
};

enum class DenseFailurePolicy { degrade_to_lexical, fail_episode };

struct EnvConfig {
  int top_k = 32;
  double rrf_k = 60.0;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  /// Each retriever contributes its top (fusion_pool_factor * top_k)
  /// entries before fusion and truncation.
  int fusion_pool_factor = 4;
  std::optional<HttpEndpoint> dense_endpoint;
  DenseFailurePolicy dense_failure = DenseFailurePolicy::degrade_to_lexical;

  void validate() const;
  bool operator==(const EnvConfig&) const = default;
};

void to_json(json& j, const EnvConfig& c);
void from_json(const json& j, EnvConfig& c);

/// The IR environment. Immutable after construction; retrieve() may be
/// called concurrently.
class RetrievalEnv {
 public:
  RetrievalEnv(std::shared_ptr<const LexicalIndex> index, EnvConfig config,
               std::shared_ptr<DenseRetriever> dense = nullptr);

  std::vector<Document> retrieve(std::string_view query) const;
  RetrieveFn as_function() const;

  const EnvConfig& config() const { return config_; }
  const LexicalIndex& index() const { return *index_; }

 private:
  std::shared_ptr<const LexicalIndex> index_;
  EnvConfig config_;
  std::shared_ptr<DenseRetriever> dense_;
};

}  // namespace raggym
