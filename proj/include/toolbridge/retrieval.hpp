#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/parallel.hpp"
#include "toolbridge/textproc.hpp"

namespace toolbridge {

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

/// Top-k result: scores non-increasing, ties by ascending doc_id, no
/// duplicate doc_id.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  std::vector<std::string> doc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.doc_id);
    return ids;
  }
  std::size_t size() const noexcept { return entries.size(); }
};

/// Selects the k best documents from a dense score vector indexed by corpus
/// position.
inline RankedList top_k(const Corpus& corpus, std::span<const double> scores, std::size_t k,
                        std::string query_id = {}) {
  if (scores.size() != corpus.size()) {
    throw Error(ErrorKind::invalid_argument, "score vector size does not match corpus size");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return corpus[a].doc_id < corpus[b].doc_id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  RankedList out;
  out.query_id = std::move(query_id);
  out.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.entries.push_back({corpus[order[i]].doc_id, scores[order[i]]});
  return out;
}

/// Common interface of every retriever. Implementations are immutable after
/// construction and safe to share across threads.
class Retriever {
 public:
  virtual ~Retriever() = default;

  virtual std::string_view kind() const = 0;
  virtual const Corpus& corpus() const = 0;
  /// Relevance of every document, indexed by corpus position.
  virtual std::vector<double> score_all(std::string_view query_text) const = 0;

  RankedList retrieve(std::string_view query_text, std::size_t k, std::string query_id = {}) const {
    if (k == 0) throw Error(ErrorKind::invalid_argument, "k must be at least 1");
    const auto scores = score_all(query_text);
    return top_k(corpus(), scores, k, std::move(query_id));
  }
};

/// Runs retrieve() for many queries; output order equals input order.
inline std::vector<RankedList> retrieve_batch(const Retriever& retriever, const std::vector<std::string>& texts,
                                              std::size_t k, std::size_t workers,
                                              const std::vector<std::string>& query_ids = {}) {
  std::vector<RankedList> out(texts.size());
  parallel_for(texts.size(), workers, [&](std::size_t i) {
    out[i] = retriever.retrieve(texts[i], k, query_ids.empty() ? std::string{} : query_ids[i]);
  });
  return out;
}

/// Unique terms in order of first appearance, with their counts.
inline std::vector<std::pair<std::string, std::uint32_t>> term_counts(const TokenStream& tokens) {
  std::vector<std::pair<std::string, std::uint32_t>> out;
  std::unordered_map<std::string_view, std::size_t> pos;
  for (const auto& t : tokens) {
    auto [it, inserted] = pos.emplace(t, out.size());
    if (inserted) {
      out.emplace_back(t, 1);
    } else {
      ++out[it->second].second;
    }
  }
  return out;
}

struct Posting {
  std::uint32_t doc = 0;  // corpus position
  std::uint32_t tf = 0;
};

/// Inverted term statistics shared by the lexical indexes.
struct TermStats {
  std::unordered_map<std::string, std::vector<Posting>> postings;  // sorted by doc
  std::vector<std::uint32_t> doc_lengths;

  static TermStats build(const Corpus& corpus) {
    TermStats s;
    s.doc_lengths.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto tokens = tokenize(doc_text(corpus[i]));
      s.doc_lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
      for (const auto& [term, tf] : term_counts(tokens)) {
        s.postings[term].push_back({static_cast<std::uint32_t>(i), tf});
      }
    }
    return s;
  }

  std::uint32_t tf(const std::string& term, std::size_t doc) const {
    auto it = postings.find(term);
    if (it == postings.end()) return 0;
    const auto& list = it->second;
    auto p = std::lower_bound(list.begin(), list.end(), doc,
                              [](const Posting& a, std::size_t d) { return a.doc < d; });
    return (p != list.end() && p->doc == doc) ? p->tf : 0;
  }

  std::size_t df(const std::string& term) const {
    auto it = postings.find(term);
    return it == postings.end() ? 0 : it->second.size();
  }
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 > 0.0)) throw Error(ErrorKind::invalid_argument, "bm25 k1 must be > 0");
    if (!(b >= 0.0 && b <= 1.0)) throw Error(ErrorKind::invalid_argument, "bm25 b must be in [0, 1]");
  }
};

/// Okapi BM25 with non-negative idf ln((N - df + 0.5) / (df + 0.5) + 1).
class Bm25Index final : public Retriever {
 public:
  Bm25Index(std::shared_ptr<const Corpus> corpus, Bm25Params params = {})
      : Bm25Index(corpus, TermStats::build(*corpus), params) {}

  Bm25Index(std::shared_ptr<const Corpus> corpus, TermStats stats, Bm25Params params)
      : corpus_(std::move(corpus)), stats_(std::move(stats)), params_(params) {
    params_.validate();
    if (!corpus_ || corpus_->size() == 0) throw Error(ErrorKind::empty_corpus, "bm25 index needs a non-empty corpus");
    if (stats_.doc_lengths.size() != corpus_->size()) {
      throw Error(ErrorKind::invalid_argument, "term statistics do not match the corpus");
    }
    const double total = std::accumulate(stats_.doc_lengths.begin(), stats_.doc_lengths.end(), 0.0);
    avgdl_ = total / static_cast<double>(corpus_->size());
  }

  std::string_view kind() const override { return "bm25"; }
  const Corpus& corpus() const override { return *corpus_; }
  const TermStats& stats() const noexcept { return stats_; }
  const Bm25Params& params() const noexcept { return params_; }
  double avgdl() const noexcept { return avgdl_; }
  std::size_t doc_count() const noexcept { return corpus_->size(); }

  double idf(const std::string& term) const {
    const auto n = static_cast<double>(corpus_->size());
    const auto df = static_cast<double>(stats_.df(term));
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
  }

  /// Score of one document, by corpus position.
  double score(const TokenStream& query, std::size_t doc) const {
    double total = 0.0;
    for (const auto& [term, qtf] : term_counts(query)) {
      const auto tf = stats_.tf(term, doc);
      if (tf == 0) continue;
      total += idf(term) * term_weight(tf, doc);
    }
    return total;
  }

  std::vector<double> score_tokens(const TokenStream& query) const {
    std::vector<double> scores(corpus_->size(), 0.0);
    for (const auto& [term, qtf] : term_counts(query)) {
      auto it = stats_.postings.find(term);
      if (it == stats_.postings.end()) continue;
      const double w = idf(term);
      for (const auto& p : it->second) scores[p.doc] += w * term_weight(p.tf, p.doc);
    }
    return scores;
  }

  std::vector<double> score_all(std::string_view query_text) const override {
    return score_tokens(tokenize(query_text));
  }

 private:
  double term_weight(std::uint32_t tf, std::size_t doc) const {
    const double f = tf;
    const double len = stats_.doc_lengths[doc];
    return f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * len / avgdl_));
  }

  std::shared_ptr<const Corpus> corpus_;
  TermStats stats_;
  Bm25Params params_;
  double avgdl_ = 0.0;
};

inline double bm25_score(const Bm25Index& index, const TokenStream& query, std::string_view doc_id) {
  return index.score(query, index.corpus().index_of(doc_id));
}

/// Cosine similarity over raw-tf x ln(N/df) weights.
class TfidfIndex final : public Retriever {
 public:
  explicit TfidfIndex(std::shared_ptr<const Corpus> corpus) : TfidfIndex(corpus, TermStats::build(*corpus)) {}

  TfidfIndex(std::shared_ptr<const Corpus> corpus, TermStats stats)
      : corpus_(std::move(corpus)), stats_(std::move(stats)) {
    if (!corpus_ || corpus_->size() == 0) throw Error(ErrorKind::empty_corpus, "tf-idf index needs a non-empty corpus");
    if (stats_.doc_lengths.size() != corpus_->size()) {
      throw Error(ErrorKind::invalid_argument, "term statistics do not match the corpus");
    }
    std::vector<double> sq(corpus_->size(), 0.0);
    std::map<std::string_view, const std::vector<Posting>*> ordered;
    for (const auto& [term, list] : stats_.postings) ordered.emplace(term, &list);
    for (const auto& [term, list] : ordered) {
      const double w = idf(std::string(term));
      for (const auto& p : *list) sq[p.doc] += (p.tf * w) * (p.tf * w);
    }
    norms_.resize(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) norms_[i] = std::sqrt(sq[i]);
  }

  std::string_view kind() const override { return "tfidf"; }
  const Corpus& corpus() const override { return *corpus_; }
  const TermStats& stats() const noexcept { return stats_; }
  /// Euclidean norm of a document's weight vector. Zero when every term of
  /// the document occurs in all documents.
  double doc_norm(std::size_t doc) const { return norms_[doc]; }

  double idf(const std::string& term) const {
    const auto df = stats_.df(term);
    if (df == 0) return 0.0;
    return std::log(static_cast<double>(corpus_->size()) / static_cast<double>(df));
  }

  double score(const TokenStream& query, std::size_t doc) const {
    double dot = 0.0;
    const double qn = query_norm(query);
    if (qn == 0.0 || norms_[doc] == 0.0) return 0.0;
    for (const auto& [term, qtf] : term_counts(query)) {
      const auto tf = stats_.tf(term, doc);
      if (tf == 0) continue;
      const double w = idf(term);
      dot += (qtf * w) * (tf * w);
    }
    return dot / (qn * norms_[doc]);
  }

  std::vector<double> score_tokens(const TokenStream& query) const {
    std::vector<double> dots(corpus_->size(), 0.0);
    const double qn = query_norm(query);
    if (qn == 0.0) return dots;
    for (const auto& [term, qtf] : term_counts(query)) {
      auto it = stats_.postings.find(term);
      if (it == stats_.postings.end()) continue;
      const double w = idf(term);
      for (const auto& p : it->second) dots[p.doc] += (qtf * w) * (p.tf * w);
    }
    for (std::size_t i = 0; i < dots.size(); ++i) {
      dots[i] = norms_[i] == 0.0 ? 0.0 : dots[i] / (qn * norms_[i]);
    }
    return dots;
  }

  std::vector<double> score_all(std::string_view query_text) const override {
    return score_tokens(tokenize(query_text));
  }

 private:
  double query_norm(const TokenStream& query) const {
    double sq = 0.0;
    for (const auto& [term, qtf] : term_counts(query)) {
      const double w = qtf * idf(term);
      sq += w * w;
    }
    return std::sqrt(sq);
  }

  std::shared_ptr<const Corpus> corpus_;
  TermStats stats_;
  std::vector<double> norms_;
};

inline double tfidf_score(const TfidfIndex& index, const TokenStream& query, std::string_view doc_id) {
  return index.score(query, index.corpus().index_of(doc_id));
}

// ---------------------------------------------------------------------------
// Dense retrieval

/// Unit-normalized document embeddings of a fixed dimension.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dimension) : dim_(dimension) {
    if (dim_ == 0) throw Error(ErrorKind::invalid_argument, "embedding dimension must be positive");
  }

  std::size_t dimension() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

  /// Normalizes and stores a vector. The first insert fixes the dimension
  /// when the store was default-constructed.
  void add(std::string doc_id, std::span<const float> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
      throw Error(ErrorKind::invalid_argument, "embedding for '" + doc_id + "' has dimension " +
                                                   std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
    }
    double sq = 0.0;
    for (float v : vec) {
      if (!std::isfinite(v)) throw Error(ErrorKind::invalid_argument, "embedding for '" + doc_id + "' is not finite");
      sq += static_cast<double>(v) * v;
    }
    if (sq == 0.0) throw Error(ErrorKind::invalid_argument, "embedding for '" + doc_id + "' is the zero vector");
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> unit(vec.size());
    for (std::size_t i = 0; i < vec.size(); ++i) unit[i] = static_cast<float>(vec[i] * inv);
    if (!vectors_.emplace(std::move(doc_id), std::move(unit)).second) {
      throw Error(ErrorKind::duplicate_key, "duplicate embedding doc_id");
    }
  }

  const std::vector<float>* find(std::string_view doc_id) const {
    auto it = vectors_.find(std::string(doc_id));
    return it == vectors_.end() ? nullptr : &it->second;
  }

  const std::vector<float>& at(std::string_view doc_id) const {
    if (auto* v = find(doc_id)) return *v;
    throw Error(ErrorKind::not_found, "no embedding for doc_id '" + std::string(doc_id) + "'");
  }

  const std::map<std::string, std::vector<float>>& vectors() const noexcept { return vectors_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<float>> vectors_;
};

/// Reads `embeddings.jsonl`: one `{doc_id, vector}` object per line.
inline EmbeddingStore load_embeddings(const std::filesystem::path& path) {
  EmbeddingStore store;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    auto id = obj.find("doc_id");
    auto vec = obj.find("vector");
    if (id == obj.end() || !id->is_string()) throw LineError(ErrorKind::parse, path.string(), line, "missing doc_id");
    if (vec == obj.end() || !vec->is_array()) throw LineError(ErrorKind::parse, path.string(), line, "missing vector");
    std::vector<float> v;
    v.reserve(vec->size());
    for (const auto& x : *vec) {
      if (!x.is_number()) throw LineError(ErrorKind::parse, path.string(), line, "vector entries must be numbers");
      v.push_back(x.get<float>());
    }
    try {
      store.add(id->get<std::string>(), v);
    } catch (const Error& e) {
      throw LineError(e.kind(), path.string(), line, e.what());
    }
  });
  if (store.size() == 0) throw Error(ErrorKind::empty_corpus, path.string() + ": no embeddings");
  return store;
}

inline void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path) {
  std::vector<OrderedJson> rows;
  for (const auto& [id, vec] : store.vectors()) {
    OrderedJson row;
    row["doc_id"] = id;
    row["vector"] = vec;
    rows.push_back(std::move(row));
  }
  write_file_atomic(path, to_jsonl(rows));
}

namespace detail {

inline double cosine_with_unit(std::span<const float> query_vec, std::span<const float> unit) {
  double sq = 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < query_vec.size(); ++i) {
    sq += static_cast<double>(query_vec[i]) * query_vec[i];
    dot += static_cast<double>(query_vec[i]) * unit[i];
  }
  if (sq == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(sq), -1.0, 1.0);
}

}  // namespace detail

/// Cosine of a query vector with a stored (unit) document vector. A zero
/// query vector scores 0.
inline double dense_score(const EmbeddingStore& store, std::span<const float> query_vec, std::string_view doc_id) {
  if (query_vec.size() != store.dimension()) {
    throw Error(ErrorKind::invalid_argument, "query dimension " + std::to_string(query_vec.size()) +
                                                 " does not match store dimension " +
                                                 std::to_string(store.dimension()));
  }
  return detail::cosine_with_unit(query_vec, store.at(doc_id));
}

/// Turns text into a dense vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<float> embed(std::string_view text) const = 0;
};

/// Signed feature hashing of tokens; deterministic, offline, and good enough
/// to exercise the dense path without a model.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0) : dim_(dimension), seed_(seed) {
    if (dim_ == 0) throw Error(ErrorKind::invalid_argument, "embedding dimension must be positive");
  }

  std::size_t dimension() const override { return dim_; }

  std::vector<float> embed(std::string_view text) const override {
    std::vector<float> v(dim_, 0.0f);
    for (const auto& tok : tokenize(text)) {
      std::uint64_t h = 1469598103934665603ULL ^ seed_;
      for (char c : tok) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
      }
      v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
    }
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline EmbeddingStore embed_corpus(const Corpus& corpus, const Embedder& embedder) {
  EmbeddingStore store(embedder.dimension());
  for (const auto& d : corpus.docs()) {
    auto v = embedder.embed(doc_text(d));
    bool zero = std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
    if (zero) v[0] = 1.0f;  // empty text: arbitrary fixed direction
    store.add(d.doc_id, v);
  }
  return store;
}

class DenseRetriever final : public Retriever {
 public:
  DenseRetriever(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const EmbeddingStore> store,
                 std::shared_ptr<const Embedder> embedder)
      : corpus_(std::move(corpus)), store_(std::move(store)), embedder_(std::move(embedder)) {
    if (!corpus_ || corpus_->size() == 0) throw Error(ErrorKind::empty_corpus, "dense retriever needs a corpus");
    if (embedder_->dimension() != store_->dimension()) {
      throw Error(ErrorKind::invalid_argument, "embedder dimension does not match the embedding store");
    }
    rows_.reserve(corpus_->size());
    for (const auto& d : corpus_->docs()) {
      const auto* v = store_->find(d.doc_id);
      if (!v) throw Error(ErrorKind::not_found, "no embedding for doc_id '" + d.doc_id + "'");
      rows_.push_back(v);
    }
  }

  std::string_view kind() const override { return "dense"; }
  const Corpus& corpus() const override { return *corpus_; }
  const EmbeddingStore& store() const noexcept { return *store_; }

  std::vector<double> score_vector(std::span<const float> query_vec) const {
    if (query_vec.size() != store_->dimension()) {
      throw Error(ErrorKind::invalid_argument, "query dimension does not match store dimension");
    }
    std::vector<double> scores(corpus_->size(), 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i) scores[i] = detail::cosine_with_unit(query_vec, *rows_[i]);
    return scores;
  }

  std::vector<double> score_all(std::string_view query_text) const override {
    return score_vector(embedder_->embed(query_text));
  }

 private:
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const EmbeddingStore> store_;
  std::shared_ptr<const Embedder> embedder_;
  std::vector<const std::vector<float>*> rows_;
};

// ---------------------------------------------------------------------------
// Hybrid

struct NormStats {
  double dense_min = 0.0;
  double dense_max = 0.0;
  double sparse_min = 0.0;
  double sparse_max = 0.0;
};

inline double minmax_normalize(double x, double lo, double hi) {
  if (hi == lo) return 0.5;
  return (x - lo) / (hi - lo);
}

inline double hybrid_score(double dense, double sparse, double alpha, const NormStats& stats) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::invalid_argument, "alpha must be in [0, 1]");
  return alpha * minmax_normalize(dense, stats.dense_min, stats.dense_max) +
         (1.0 - alpha) * minmax_normalize(sparse, stats.sparse_min, stats.sparse_max);
}

/// Linear combination of a dense and a sparse retriever. Each family is
/// min-max normalized over the union of both retrievers' top-`pool`
/// candidates for the current query; the combined formula is then applied to
/// every document.
class HybridRetriever final : public Retriever {
 public:
  HybridRetriever(std::shared_ptr<const Retriever> dense, std::shared_ptr<const Retriever> sparse, double alpha,
                  std::size_t pool = 50)
      : dense_(std::move(dense)), sparse_(std::move(sparse)), alpha_(alpha), pool_(pool) {
    if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw Error(ErrorKind::invalid_argument, "alpha must be in [0, 1]");
    if (pool_ == 0) throw Error(ErrorKind::invalid_argument, "hybrid pool must be positive");
    const auto& a = dense_->corpus();
    const auto& b = sparse_->corpus();
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].doc_id == b[i].doc_id;
    if (!same) throw Error(ErrorKind::invalid_argument, "hybrid retrievers must share one corpus");
  }

  std::string_view kind() const override { return "hybrid"; }
  const Corpus& corpus() const override { return dense_->corpus(); }
  double alpha() const noexcept { return alpha_; }

  NormStats norm_stats(std::span<const double> dense, std::span<const double> sparse) const {
    const auto& c = corpus();
    std::vector<std::size_t> pool;
    std::unordered_set<std::string> seen;
    for (auto scores : {dense, sparse}) {
      for (const auto& e : top_k(c, scores, pool_).entries) {
        if (seen.insert(e.doc_id).second) pool.push_back(c.index_of(e.doc_id));
      }
    }
    NormStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (auto i : pool) {
      s.dense_min = std::min(s.dense_min, dense[i]);
      s.dense_max = std::max(s.dense_max, dense[i]);
      s.sparse_min = std::min(s.sparse_min, sparse[i]);
      s.sparse_max = std::max(s.sparse_max, sparse[i]);
    }
    return s;
  }

  std::vector<double> score_all(std::string_view query_text) const override {
    const auto d = dense_->score_all(query_text);
    const auto s = sparse_->score_all(query_text);
    const auto stats = norm_stats(d, s);
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = hybrid_score(d[i], s[i], alpha_, stats);
    return out;
  }

 private:
  std::shared_ptr<const Retriever> dense_;
  std::shared_ptr<const Retriever> sparse_;
  double alpha_;
  std::size_t pool_;
};

// ---------------------------------------------------------------------------
// Snapshots

inline constexpr int kIndexFormatVersion = 1;

/// Persists a lexical index as JSON. Only bm25 and tfidf indexes persist;
/// dense retrievers persist through `embeddings.jsonl`.
inline void save_index_snapshot(const Retriever& retriever, const std::filesystem::path& path) {
  const TermStats* stats = nullptr;
  OrderedJson j;
  j["format"] = "toolbridge-index";
  j["format_version"] = kIndexFormatVersion;
  j["kind"] = std::string(retriever.kind());
  if (auto* bm25 = dynamic_cast<const Bm25Index*>(&retriever)) {
    stats = &bm25->stats();
    j["params"] = {{"k1", bm25->params().k1}, {"b", bm25->params().b}};
  } else if (auto* tfidf = dynamic_cast<const TfidfIndex*>(&retriever)) {
    stats = &tfidf->stats();
    j["params"] = OrderedJson::object();
  } else {
    throw Error(ErrorKind::invalid_argument, "only bm25 and tfidf indexes can be snapshotted");
  }
  auto ids = OrderedJson::array();
  for (const auto& d : retriever.corpus().docs()) ids.push_back(d.doc_id);
  j["doc_ids"] = std::move(ids);
  j["doc_lengths"] = stats->doc_lengths;
  std::map<std::string, const std::vector<Posting>*> ordered;
  for (const auto& [term, list] : stats->postings) ordered.emplace(term, &list);
  OrderedJson postings = OrderedJson::object();
  for (const auto& [term, list] : ordered) {
    auto arr = OrderedJson::array();
    for (const auto& p : *list) arr.push_back({p.doc, p.tf});
    postings[term] = std::move(arr);
  }
  j["postings"] = std::move(postings);
  write_file_atomic(path, j.dump());
}

inline std::unique_ptr<Retriever> load_index_snapshot(const std::filesystem::path& path,
                                                      std::shared_ptr<const Corpus> corpus) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::parse, path.string() + ": invalid JSON: " + e.what());
  }
  if (j.value("format", "") != "toolbridge-index") {
    throw Error(ErrorKind::parse, path.string() + ": not a toolbridge index snapshot");
  }
  const int version = j.value("format_version", -1);
  if (version != kIndexFormatVersion) {
    throw Error(ErrorKind::version_mismatch, path.string() + ": snapshot format_version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kIndexFormatVersion));
  }
  try {
    const auto ids = j.at("doc_ids").get<std::vector<std::string>>();
    bool same = ids.size() == corpus->size();
    for (std::size_t i = 0; same && i < ids.size(); ++i) same = ids[i] == (*corpus)[i].doc_id;
    if (!same) throw Error(ErrorKind::invalid_argument, path.string() + ": snapshot was built from a different corpus");
    TermStats stats;
    stats.doc_lengths = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
    for (const auto& [term, arr] : j.at("postings").items()) {
      auto& list = stats.postings[term];
      for (const auto& p : arr) {
        const auto doc = p.at(0).get<std::uint32_t>();
        if (doc >= corpus->size()) throw Error(ErrorKind::parse, path.string() + ": posting outside corpus");
        list.push_back({doc, p.at(1).get<std::uint32_t>()});
      }
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "bm25") {
      Bm25Params params{j.at("params").at("k1").get<double>(), j.at("params").at("b").get<double>()};
      return std::make_unique<Bm25Index>(std::move(corpus), std::move(stats), params);
    }
    if (kind == "tfidf") return std::make_unique<TfidfIndex>(std::move(corpus), std::move(stats));
    throw Error(ErrorKind::parse, path.string() + ": unknown index kind '" + kind + "'");
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": malformed snapshot: " + e.what());
  }
}

}  // namespace toolbridge
