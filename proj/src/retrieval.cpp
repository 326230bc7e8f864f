// SPDX-License-Identifier: Apache-2.0
#include "raggym/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

void to_json(json& j, const CorpusDocument& d) {
  j = json{{"doc_id", d.doc_id}, {"title", d.title}, {"text", d.text}};
}

void from_json(const json& j, CorpusDocument& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.title = j.value("title", std::string());
  d.text = j.at("text").get<std::string>();
}

std::vector<CorpusDocument> load_corpus(const std::filesystem::path& jsonl) {
  std::vector<CorpusDocument> docs;
  for (const auto& row : read_jsonl(jsonl)) {
    try {
      docs.push_back(row.get<CorpusDocument>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ingestion, std::string("malformed corpus record: ") + e.what(), jsonl.string());
    }
  }
  return docs;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

void finish_stats(LexicalIndex& index) {
  index.doc_count = index.documents.size();
  double total = 0;
  for (auto len : index.doc_lengths) total += len;
  index.avg_doc_length = index.doc_count == 0 ? 0.0 : total / static_cast<double>(index.doc_count);
}

void sort_ranked(RankedList& list) {
  std::sort(list.begin(), list.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

}  // namespace

LexicalIndex ingest_corpus(std::span<const CorpusDocument> documents) {
  LexicalIndex index;
  index.documents.reserve(documents.size());
  for (const auto& doc : documents) {
    if (index.id_to_doc.count(doc.doc_id)) {
      throw Error(ErrorKind::ingestion, "duplicate doc_id '" + doc.doc_id + "'", doc.doc_id);
    }
    if (trim(doc.text).empty()) {
      throw Error(ErrorKind::ingestion, "document '" + doc.doc_id + "' has empty text", doc.doc_id);
    }
    const auto slot = static_cast<std::uint32_t>(index.documents.size());
    index.id_to_doc.emplace(doc.doc_id, slot);
    index.documents.push_back(doc);

    std::map<std::string, std::uint32_t> tf;
    auto tokens = tokenize(doc.title);
    auto body = tokenize(doc.text);
    tokens.insert(tokens.end(), body.begin(), body.end());
    for (const auto& t : tokens) ++tf[t];
    index.doc_lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
    for (const auto& [term, count] : tf) index.postings[term].push_back({slot, count});
  }
  finish_stats(index);
  return index;
}

RankedList bm25_search(const LexicalIndex& index, std::string_view query, int top_k, Bm25Params params) {
  if (top_k < 1) throw Error(ErrorKind::invalid_input, "top_k must be >= 1");
  if (index.doc_count == 0) return {};
  std::vector<std::string> terms = tokenize(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  const double n_docs = static_cast<double>(index.doc_count);
  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& term : terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const double df = static_cast<double>(it->second.size());
    const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
    for (const auto& p : it->second) {
      const double tf = p.tf;
      const double norm = 1.0 - params.b + params.b * index.doc_lengths[p.doc] / index.avg_doc_length;
      scores[p.doc] += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
    }
  }
  RankedList out;
  out.reserve(scores.size());
  for (const auto& [doc, score] : scores) out.push_back({index.documents[doc].doc_id, score});
  sort_ranked(out);
  if (out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
  return out;
}

RankedList rrf_fuse(std::span<const RankedList> lists, double rrf_k, int top_k) {
  if (rrf_k <= 0) throw Error(ErrorKind::invalid_input, "rrf_k must be > 0");
  if (top_k < 1) throw Error(ErrorKind::invalid_input, "top_k must be >= 1");
  std::map<std::string, double> fused;
  for (const auto& list : lists) {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!seen.insert(list[i].doc_id).second) continue;
      fused[list[i].doc_id] += 1.0 / (rrf_k + static_cast<double>(i + 1));
    }
  }
  RankedList out;
  out.reserve(fused.size());
  for (const auto& [id, score] : fused) out.push_back({id, score});
  sort_ranked(out);
  if (out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
  return out;
}

void save_index(const LexicalIndex& index, const std::filesystem::path& file) {
  json postings = json::object();
  // std::map for a stable key order in the file
  std::map<std::string, const std::vector<Posting>*> ordered;
  for (const auto& [term, list] : index.postings) ordered.emplace(term, &list);
  for (const auto& [term, list] : ordered) {
    json rows = json::array();
    for (const auto& p : *list) rows.push_back({p.doc, p.tf});
    postings[term] = std::move(rows);
  }
  json j{{"schema", "raggym.index.v1"},
         {"documents", index.documents},
         {"doc_lengths", index.doc_lengths},
         {"doc_count", index.doc_count},
         {"avg_doc_length", index.avg_doc_length},
         {"postings", std::move(postings)}};
  write_file(file, j.dump());
}

LexicalIndex load_index(const std::filesystem::path& file) {
  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ingestion, std::string("malformed index file: ") + e.what(), file.string());
  }
  if (j.value("schema", std::string()) != "raggym.index.v1") {
    throw Error(ErrorKind::ingestion, "unsupported index schema", file.string());
  }
  LexicalIndex index;
  index.documents = j.at("documents").get<std::vector<CorpusDocument>>();
  index.doc_lengths = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
  for (std::uint32_t i = 0; i < index.documents.size(); ++i) index.id_to_doc.emplace(index.documents[i].doc_id, i);
  for (const auto& [term, rows] : j.at("postings").items()) {
    auto& list = index.postings[term];
    for (const auto& row : rows) list.push_back({row.at(0).get<std::uint32_t>(), row.at(1).get<std::uint32_t>()});
  }
  finish_stats(index);
  if (index.doc_lengths.size() != index.documents.size() || index.doc_count != j.at("doc_count").get<std::size_t>()) {
    throw Error(ErrorKind::ingestion, "index statistics are inconsistent", file.string());
  }
  return index;
}

RankedList HttpDenseRetriever::search(std::string_view query, int top_k) {
  const json reply = post_json(endpoint_, "", json{{"query", std::string(query)}, {"top_k", top_k}});
  RankedList out;
  try {
    for (const auto& e : reply.at("entries")) {
      const double score = e.at("score").get<double>();
      if (!std::isfinite(score)) throw Error(ErrorKind::environment, "dense endpoint returned a non-finite score");
      out.push_back({e.at("doc_id").get<std::string>(), score});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::environment, std::string("malformed dense reply: ") + e.what(), endpoint_.url);
  }
  sort_ranked(out);
  std::unordered_set<std::string> seen;
  std::erase_if(out, [&](const RankedEntry& e) { return !seen.insert(e.doc_id).second; });
  if (out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
  return out;
}

void EnvConfig::validate() const {
  if (top_k < 1) throw Error(ErrorKind::config, "env.top_k must be >= 1");
  if (!(rrf_k > 0)) throw Error(ErrorKind::config, "env.rrf_k must be > 0");
  if (fusion_pool_factor < 1) throw Error(ErrorKind::config, "env.fusion_pool_factor must be >= 1");
  if (bm25_k1 < 0 || bm25_b < 0 || bm25_b > 1) throw Error(ErrorKind::config, "env.bm25 parameters out of range");
}

void to_json(json& j, const EnvConfig& c) {
  j = json{{"top_k", c.top_k},
           {"rrf_k", c.rrf_k},
           {"bm25_k1", c.bm25_k1},
           {"bm25_b", c.bm25_b},
           {"fusion_pool_factor", c.fusion_pool_factor},
           {"dense_failure", c.dense_failure == DenseFailurePolicy::fail_episode ? "fail" : "degrade"}};
  j["dense_endpoint"] = c.dense_endpoint ? json(*c.dense_endpoint) : json(nullptr);
}

void from_json(const json& j, EnvConfig& c) {
  c.top_k = j.value("top_k", 32);
  c.rrf_k = j.value("rrf_k", 60.0);
  c.bm25_k1 = j.value("bm25_k1", 1.2);
  c.bm25_b = j.value("bm25_b", 0.75);
  c.fusion_pool_factor = j.value("fusion_pool_factor", 4);
  const auto policy = j.value("dense_failure", std::string("degrade"));
  if (policy != "degrade" && policy != "fail") throw Error(ErrorKind::config, "env.dense_failure must be degrade|fail");
  c.dense_failure = policy == "fail" ? DenseFailurePolicy::fail_episode : DenseFailurePolicy::degrade_to_lexical;
  if (j.contains("dense_endpoint") && !j.at("dense_endpoint").is_null()) {
    c.dense_endpoint = j.at("dense_endpoint").get<HttpEndpoint>();
  } else {
    c.dense_endpoint.reset();
  }
}

RetrievalEnv::RetrievalEnv(std::shared_ptr<const LexicalIndex> index, EnvConfig config,
                           std::shared_ptr<DenseRetriever> dense)
    : index_(std::move(index)), config_(std::move(config)), dense_(std::move(dense)) {
  config_.validate();
  if (!index_) throw Error(ErrorKind::invalid_input, "retrieval environment needs an index");
  if (!dense_ && config_.dense_endpoint) dense_ = std::make_shared<HttpDenseRetriever>(*config_.dense_endpoint);
}

std::vector<Document> RetrievalEnv::retrieve(std::string_view query) const {
  const int pool = config_.top_k * config_.fusion_pool_factor;
  const Bm25Params params{config_.bm25_k1, config_.bm25_b};
  RankedList lexical = bm25_search(*index_, query, pool, params);
  RankedList ranked;
  if (dense_) {
    std::optional<RankedList> dense;
    try {
      dense = dense_->search(query, pool);
    } catch (const std::exception& e) {
      if (config_.dense_failure == DenseFailurePolicy::fail_episode) {
        throw Error(ErrorKind::environment, std::string("dense retrieval failed: ") + e.what(), std::string(query));
      }
      spdlog::warn("dense retrieval failed for '{}', using lexical results only: {}", query, e.what());
    }
    if (dense) {
      std::erase_if(*dense, [&](const RankedEntry& e) { return !index_->id_to_doc.count(e.doc_id); });
      const RankedList lists[] = {std::move(lexical), std::move(*dense)};
      ranked = rrf_fuse(lists, config_.rrf_k, config_.top_k);
    } else {
      ranked = std::move(lexical);
    }
  } else {
    ranked = std::move(lexical);
  }
  if (ranked.size() > static_cast<std::size_t>(config_.top_k)) ranked.resize(static_cast<std::size_t>(config_.top_k));

  std::vector<Document> out;
  out.reserve(ranked.size());
  for (const auto& e : ranked) {
    const auto& doc = index_->documents[index_->id_to_doc.at(e.doc_id)];
    out.push_back(Document{doc.doc_id, doc.title, doc.text, e.score});
  }
  return out;
}

RetrieveFn RetrievalEnv::as_function() const {
  return [this](std::string_view query) { return retrieve(query); };
}

}  // namespace raggym
