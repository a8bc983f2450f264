#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/dpo_math.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/metrics.hpp"
#include "toolbridge/parallel.hpp"
#include "toolbridge/preference.hpp"
#include "toolbridge/report.hpp"
#include "toolbridge/retrieval.hpp"
#include "toolbridge/rewriter.hpp"
#include "toolbridge/synthetic.hpp"

namespace toolbridge {

// ---------------------------------------------------------------------------
// Configuration

struct RetrieverConfig {
  std::string kind = "bm25";  // bm25 | tfidf | dense | hybrid
  Bm25Params bm25;
  double alpha = 0.5;
  std::size_t pool = 50;
  std::filesystem::path index;       // optional lexical snapshot
  std::filesystem::path embeddings;  // dense: embeddings.jsonl (built on the fly when empty)
  std::string embedder = "hashing";  // hashing | http
  std::size_t dimension = 256;
  std::string embedding_endpoint;
  std::string embedding_model = "text-embedding";
};

/// Learning rates are per record: both losses average over rows and each row
/// only touches its own prompt, so the toy loop scales the step by the row
/// count.
struct TrainConfig {
  std::size_t steps = 50;
  double lr = 1.0;
  std::size_t sft_steps = 10;
  double sft_lr = 0.5;
  std::size_t distractors = 3;
};

inline const std::vector<std::string>& known_stages() {
  static const std::vector<std::string> stages{"baseline", "rewrite", "pairs", "train", "iterate"};
  return stages;
}

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::filesystem::path queries;
  RetrieverConfig retriever;
  std::string backend = "mock";  // mock | identity | toy | http
  std::string mock_mode = "graded";
  std::filesystem::path policy;
  std::filesystem::path policy_sft;
  std::string template_id = "enhance";
  std::filesystem::path template_file;
  BackendConfig http;
  std::size_t n = 4;
  std::size_t k = 10;
  double beta = 0.1;
  std::size_t iterations = 1;
  std::uint64_t seed = 42;
  std::size_t workers = default_workers();
  std::vector<std::size_t> cutoffs{5, 10};
  bool best_of_n = false;
  TrainConfig train;
  SyntheticSpec synth;
  std::filesystem::path out;
  std::vector<std::string> stages{"baseline"};

  /// Stage set must be non-empty, known, and dependency-closed.
  void validate_stages() const {
    if (stages.empty()) throw ConfigError("/stages", "at least one stage is required");
    std::set<std::string> s(stages.begin(), stages.end());
    for (const auto& st : s) {
      if (std::find(known_stages().begin(), known_stages().end(), st) == known_stages().end()) {
        throw ConfigError("/stages", "unknown stage '" + st + "'");
      }
    }
    auto need = [&](const char* stage, const char* dep) {
      if (s.count(stage) && !s.count(dep)) {
        throw ConfigError("/stages", std::string("stage '") + stage + "' requires '" + dep + "'");
      }
    };
    need("rewrite", "baseline");
    need("train", "pairs");
    need("iterate", "train");
  }

  void validate() const {
    const std::set<std::string> kinds{"bm25", "tfidf", "dense", "hybrid"};
    if (!kinds.count(retriever.kind)) throw ConfigError("/retriever", "must be one of bm25|tfidf|dense|hybrid");
    try {
      retriever.bm25.validate();
    } catch (const Error& e) {
      throw ConfigError("/bm25", e.what());
    }
    if (!(retriever.alpha >= 0.0 && retriever.alpha <= 1.0)) throw ConfigError("/hybrid/alpha", "must be in [0, 1]");
    if (retriever.pool == 0) throw ConfigError("/hybrid/pool", "must be >= 1");
    const std::set<std::string> backends{"mock", "identity", "toy", "http"};
    if (!backends.count(backend)) throw ConfigError("/backend", "must be one of http|mock|toy|identity");
    if (mock_mode != "graded" && mock_mode != "oracle") throw ConfigError("/mock_mode", "must be graded or oracle");
    if (n == 0) throw ConfigError("/n", "must be >= 1");
    if (k == 0) throw ConfigError("/k", "must be >= 1");
    if (!(beta > 0.0)) throw ConfigError("/beta", "must be > 0");
    if (iterations == 0) throw ConfigError("/iterations", "must be >= 1");
    if (workers == 0) throw ConfigError("/workers", "must be >= 1");
    if (cutoffs.empty()) throw ConfigError("/cutoffs", "at least one cutoff is required");
    for (auto c : cutoffs) {
      if (c == 0) throw ConfigError("/cutoffs", "cutoffs must be >= 1");
    }
    if (!(train.lr > 0.0)) throw ConfigError("/train/lr", "must be > 0");
    if (!(train.sft_lr > 0.0)) throw ConfigError("/train/sft_lr", "must be > 0");
    validate_stages();
    if (backend == "http") {
      auto h = http;
      h.kind = BackendConfig::Kind::http_endpoint;
      h.validate();
    }
  }
};

namespace detail {

// Reads one JSON object, tracking the field path and rejecting unknown keys.
class ConfigReader {
 public:
  ConfigReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_ + "/" + key; }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, value] : obj_.items()) {
      bool ok = false;
      for (const char* k : keys) ok = ok || key == k;
      if (!ok) throw ConfigError(field(key), "unknown field");
    }
  }

  const Json* find(const std::string& key) const {
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::string& out) const {
    if (auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::filesystem::path& out) const {
    std::string s;
    if (find(key)) {
      read(key, s);
      out = s;
    }
  }
  void read(const std::string& key, double& out) const {
    if (auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) const {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  template <typename T>
    requires std::is_unsigned_v<T>
  void read(const std::string& key, T& out) const {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key), "expected a non-negative integer");
      out = v->get<T>();
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) const {
    if (auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number_unsigned()) throw ConfigError(field(key), "expected an array of integers");
        out.push_back(x.get<std::size_t>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) const {
    if (auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of strings");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_string()) throw ConfigError(field(key), "expected an array of strings");
        out.push_back(x.get<std::string>());
      }
    }
  }

  std::optional<ConfigReader> child(const std::string& key) const {
    if (auto* v = find(key)) return ConfigReader(*v, field(key));
    return std::nullopt;
  }

 private:
  const Json& obj_;
  std::string path_;
};

}  // namespace detail

/// Applies a JSON config object on top of `config`.
inline void apply_config_json(ExperimentConfig& config, const Json& root) {
  detail::ConfigReader r(root, "");
  r.allow({"corpus", "queries", "retriever", "bm25", "hybrid", "dense", "index", "backend", "mock_mode", "policy",
           "policy_sft", "template", "template_file", "http", "n", "k", "beta", "iterations", "seed", "workers",
           "cutoffs", "best_of_n", "train", "synth", "out", "stages"});
  r.read("corpus", config.corpus);
  r.read("queries", config.queries);
  r.read("retriever", config.retriever.kind);
  r.read("index", config.retriever.index);
  r.read("backend", config.backend);
  r.read("mock_mode", config.mock_mode);
  r.read("policy", config.policy);
  r.read("policy_sft", config.policy_sft);
  r.read("template", config.template_id);
  r.read("template_file", config.template_file);
  r.read("n", config.n);
  r.read("k", config.k);
  r.read("beta", config.beta);
  r.read("iterations", config.iterations);
  r.read("seed", config.seed);
  r.read("workers", config.workers);
  r.read("cutoffs", config.cutoffs);
  r.read("best_of_n", config.best_of_n);
  r.read("out", config.out);
  r.read("stages", config.stages);
  if (auto c = r.child("bm25")) {
    c->allow({"k1", "b"});
    c->read("k1", config.retriever.bm25.k1);
    c->read("b", config.retriever.bm25.b);
  }
  if (auto c = r.child("hybrid")) {
    c->allow({"alpha", "pool"});
    c->read("alpha", config.retriever.alpha);
    c->read("pool", config.retriever.pool);
  }
  if (auto c = r.child("dense")) {
    c->allow({"embeddings", "embedder", "dimension", "endpoint", "model"});
    c->read("embeddings", config.retriever.embeddings);
    c->read("embedder", config.retriever.embedder);
    c->read("dimension", config.retriever.dimension);
    c->read("endpoint", config.retriever.embedding_endpoint);
    c->read("model", config.retriever.embedding_model);
  }
  if (auto c = r.child("http")) {
    c->allow({"endpoint", "model", "temperature", "timeout_s", "max_retries", "cache_dir", "api", "max_concurrency"});
    c->read("endpoint", config.http.endpoint);
    c->read("model", config.http.model);
    c->read("temperature", config.http.temperature);
    c->read("timeout_s", config.http.timeout_seconds);
    c->read("max_retries", config.http.max_retries);
    c->read("cache_dir", config.http.cache_dir);
    c->read("max_concurrency", config.http.max_concurrency);
    std::string api;
    c->read("api", api);
    if (!api.empty()) {
      if (api == "native") {
        config.http.api_style = BackendConfig::ApiStyle::native;
      } else if (api == "openai") {
        config.http.api_style = BackendConfig::ApiStyle::openai_chat;
      } else {
        throw ConfigError("/http/api", "must be native or openai");
      }
    }
  }
  if (auto c = r.child("train")) {
    c->allow({"steps", "lr", "sft_steps", "sft_lr", "distractors"});
    c->read("steps", config.train.steps);
    c->read("lr", config.train.lr);
    c->read("sft_steps", config.train.sft_steps);
    c->read("sft_lr", config.train.sft_lr);
    c->read("distractors", config.train.distractors);
  }
  if (auto c = r.child("synth")) {
    c->allow({"tools", "queries", "min_tools", "max_tools", "vocab"});
    c->read("tools", config.synth.num_tools);
    c->read("queries", config.synth.num_queries);
    c->read("min_tools", config.synth.min_tools_per_query);
    c->read("max_tools", config.synth.max_tools_per_query);
    c->read("vocab", config.synth.vocab_size);
  }
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {}) {
  Json root;
  try {
    root = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("/", path.string() + ": invalid JSON: " + e.what());
  } catch (const Error& e) {
    throw ConfigError("/", e.what());
  }
  apply_config_json(base, root);
  return base;
}

/// The fully-resolved configuration, echoed by every run. `workers` is left
/// out: it changes scheduling only, never results.
inline OrderedJson to_json(const ExperimentConfig& c) {
  OrderedJson j;
  j["corpus"] = c.corpus.string();
  j["queries"] = c.queries.string();
  j["retriever"] = c.retriever.kind;
  j["bm25"] = {{"k1", c.retriever.bm25.k1}, {"b", c.retriever.bm25.b}};
  j["hybrid"] = {{"alpha", c.retriever.alpha}, {"pool", c.retriever.pool}};
  j["dense"] = {{"embeddings", c.retriever.embeddings.string()},
                {"embedder", c.retriever.embedder},
                {"dimension", c.retriever.dimension},
                {"endpoint", c.retriever.embedding_endpoint},
                {"model", c.retriever.embedding_model}};
  j["index"] = c.retriever.index.string();
  j["backend"] = c.backend;
  j["mock_mode"] = c.mock_mode;
  j["policy"] = c.policy.string();
  j["policy_sft"] = c.policy_sft.string();
  j["template"] = c.template_id;
  j["template_file"] = c.template_file.string();
  j["http"] = {{"endpoint", c.http.endpoint},
               {"model", c.http.model},
               {"temperature", c.http.temperature},
               {"timeout_s", c.http.timeout_seconds},
               {"max_retries", c.http.max_retries},
               {"cache_dir", c.http.cache_dir.string()},
               {"api", c.http.api_style == BackendConfig::ApiStyle::native ? "native" : "openai"},
               {"max_concurrency", c.http.max_concurrency}};
  j["n"] = c.n;
  j["k"] = c.k;
  j["beta"] = c.beta;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["cutoffs"] = c.cutoffs;
  j["best_of_n"] = c.best_of_n;
  j["train"] = {{"steps", c.train.steps},
                {"lr", c.train.lr},
                {"sft_steps", c.train.sft_steps},
                {"sft_lr", c.train.sft_lr},
                {"distractors", c.train.distractors}};
  j["synth"] = {{"tools", c.synth.num_tools},
                {"queries", c.synth.num_queries},
                {"min_tools", c.synth.min_tools_per_query},
                {"max_tools", c.synth.max_tools_per_query},
                {"vocab", c.synth.vocab_size}};
  j["out"] = c.out.string();
  j["stages"] = c.stages;
  return j;
}

inline RewritePrompt load_prompt(const ExperimentConfig& c) {
  if (!c.template_file.empty()) return RewritePrompt(c.template_file.stem().string(), read_text_file(c.template_file));
  return RewritePrompt::builtin(c.template_id);
}

/// Builds the configured retriever. `embedder` overrides the hashing
/// embedder for dense and hybrid retrieval.
inline std::shared_ptr<const Retriever> make_retriever(const RetrieverConfig& rc, std::shared_ptr<const Corpus> corpus,
                                                       std::shared_ptr<const Embedder> embedder = nullptr) {
  auto lexical = [&](const std::string& kind) -> std::shared_ptr<const Retriever> {
    if (!rc.index.empty()) {
      std::shared_ptr<const Retriever> r = load_index_snapshot(rc.index, corpus);
      if (r->kind() != kind) {
        throw Error(ErrorKind::invalid_argument, "index snapshot holds a " + std::string(r->kind()) + " index, not " + kind);
      }
      return r;
    }
    if (kind == "bm25") return std::make_shared<Bm25Index>(corpus, rc.bm25);
    return std::make_shared<TfidfIndex>(corpus);
  };
  auto dense = [&]() -> std::shared_ptr<const Retriever> {
    auto emb = embedder ? embedder : std::make_shared<HashingEmbedder>(rc.dimension);
    auto store = rc.embeddings.empty() ? std::make_shared<const EmbeddingStore>(embed_corpus(*corpus, *emb))
                                       : std::make_shared<const EmbeddingStore>(load_embeddings(rc.embeddings));
    return std::make_shared<DenseRetriever>(corpus, store, emb);
  };
  if (rc.kind == "bm25" || rc.kind == "tfidf") return lexical(rc.kind);
  if (rc.kind == "dense") return dense();
  if (rc.kind == "hybrid") return std::make_shared<HybridRetriever>(dense(), lexical("bm25"), rc.alpha, rc.pool);
  throw Error(ErrorKind::invalid_argument, "unknown retriever '" + rc.kind + "'");
}

// ---------------------------------------------------------------------------
// Experiments

inline std::vector<std::string> vague_texts(const std::vector<QueryRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.vague);
  return out;
}

/// Vague vs. specific evaluation of the same retriever.
inline ComparisonReport run_degradation(const Retriever& retriever, const std::vector<QueryRecord>& records,
                                        const NdcgConfig& ndcg = {}, std::size_t workers = 1) {
  std::string missing;
  std::vector<std::string> specific;
  for (const auto& r : records) {
    if (!r.specific || r.specific->empty()) {
      if (!missing.empty()) missing += ", ";
      missing += r.query_id;
    } else {
      specific.push_back(*r.specific);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::invalid_argument, "queries without a specific instruction: " + missing);
  }
  ComparisonReport report;
  report.kind = "degradation";
  report.retriever = std::string(retriever.kind());
  report.cutoffs = ndcg.cutoffs;
  report.runs.push_back(evaluate(retriever, records, specific, "specific", ndcg, workers));
  report.runs.push_back(evaluate(retriever, records, vague_texts(records), "vague", ndcg, workers));
  report.deltas.push_back({"%Δ↓", "vague", "specific"});
  return report;
}

/// Evaluation of the vague instructions only.
inline ComparisonReport run_plain_eval(const Retriever& retriever, const std::vector<QueryRecord>& records,
                                       const NdcgConfig& ndcg = {}, std::size_t workers = 1) {
  ComparisonReport report;
  report.kind = "eval";
  report.retriever = std::string(retriever.kind());
  report.cutoffs = ndcg.cutoffs;
  report.runs.push_back(evaluate(retriever, records, vague_texts(records), "vague", ndcg, workers));
  return report;
}

struct RewriteOutcome {
  std::vector<std::string> texts;  // the instruction issued per record
  std::size_t rewritten = 0;
  std::size_t fell_back = 0;
};

/// Rewrites each vague instruction once. Best-of-1 takes candidate 0;
/// best-of-n keeps the candidate whose top-ranked document scores highest
/// under the retriever (label free; ties to the lowest index). Records whose
/// chosen candidate fell back keep the vague text and are counted.
inline RewriteOutcome rewrite_queries(const Retriever& retriever, const std::vector<QueryRecord>& records,
                                      const Backend& backend, const RewritePrompt& prompt, std::size_t n,
                                      bool best_of_n, std::size_t workers) {
  const std::size_t draws = best_of_n ? std::max<std::size_t>(n, 1) : 1;
  auto samples = sample_batch(backend, prompt, records, draws, workers);
  RewriteOutcome out;
  out.texts.resize(records.size());
  std::vector<char> fell(records.size(), 0);
  parallel_for(records.size(), workers, [&](std::size_t i) {
    const CandidateRewrite* pick = nullptr;
    double best = 0.0;
    for (const auto& c : samples[i].candidates) {
      if (c.fallback) continue;
      if (draws == 1) {
        pick = &c;
        break;
      }
      const auto top = retriever.retrieve(c.text, 1);
      const double s = top.entries.empty() ? 0.0 : top.entries.front().score;
      if (!pick || s > best) {
        pick = &c;
        best = s;
      }
    }
    if (pick) {
      out.texts[i] = pick->text;
    } else {
      out.texts[i] = records[i].vague;
      fell[i] = 1;
    }
  });
  for (char f : fell) (f ? out.fell_back : out.rewritten) += 1;
  return out;
}

/// Vague baseline vs. rewritten instructions.
inline ComparisonReport run_trb(const Retriever& retriever, const std::vector<QueryRecord>& records,
                                const Backend& backend, const RewritePrompt& prompt, std::size_t n, bool best_of_n,
                                const NdcgConfig& ndcg = {}, std::size_t workers = 1) {
  ComparisonReport report;
  report.kind = "trb";
  report.retriever = std::string(retriever.kind());
  report.cutoffs = ndcg.cutoffs;
  report.runs.push_back(evaluate(retriever, records, vague_texts(records), "vague", ndcg, workers));
  const auto rw = rewrite_queries(retriever, records, backend, prompt, n, best_of_n, workers);
  report.runs.push_back(evaluate(retriever, records, rw.texts, "+rewrite", ndcg, workers));
  report.deltas.push_back({"%Δ↑", "+rewrite", "vague"});
  report.extra["backend"] = backend.name();
  report.extra["selection"] = best_of_n ? "best-of-" + std::to_string(n) : "best-of-1";
  report.extra["queries_total"] = records.size();
  report.extra["rewritten"] = rw.rewritten;
  report.extra["fell_back"] = rw.fell_back;
  return report;
}

struct AblationVariant {
  std::string label;
  std::shared_ptr<const Backend> backend;
};

/// Baseline retriever vs. one rewrite run per backend, each with best-of-1.
inline ComparisonReport run_ablation(const Retriever& retriever, const std::vector<QueryRecord>& records,
                                     const std::vector<AblationVariant>& variants, const RewritePrompt& prompt,
                                     const NdcgConfig& ndcg = {}, std::size_t workers = 1) {
  if (variants.empty()) throw Error(ErrorKind::invalid_argument, "ablation needs at least one backend");
  ComparisonReport report;
  report.kind = "ablation";
  report.layout = "table4";
  report.retriever = std::string(retriever.kind());
  report.cutoffs = ndcg.cutoffs;
  const auto baseline_label = std::string(retriever.kind());
  report.runs.push_back(evaluate(retriever, records, vague_texts(records), baseline_label, ndcg, workers));
  OrderedJson accounting = OrderedJson::object();
  for (const auto& v : variants) {
    const auto rw = rewrite_queries(retriever, records, *v.backend, prompt, 1, false, workers);
    report.runs.push_back(evaluate(retriever, records, rw.texts, v.label, ndcg, workers));
    report.deltas.push_back({"%Δ " + v.label, v.label, baseline_label});
    accounting[v.label] = {{"backend", v.backend->name()}, {"rewritten", rw.rewritten}, {"fell_back", rw.fell_back}};
  }
  report.extra["variants"] = std::move(accounting);
  report.extra["queries_total"] = records.size();
  return report;
}

// ---------------------------------------------------------------------------
// Closed toy loop: SFT warm-up, then iterative DPO on a tabular policy.

/// Per-record completion universe. Order: `distractors` rewrites naming an
/// unrelated tool, the vague text itself, then mock rewrites naming the
/// first 1..|ground truth| ground-truth tools. SFT targets the first mock
/// rewrite.
struct ToyUniverse {
  TabularPolicy policy;  // uniform logits
  std::vector<SftRow> sft_rows;
};

inline ToyUniverse build_toy_universe(const std::vector<QueryRecord>& records, const Corpus& corpus,
                                      std::size_t distractors, std::uint64_t seed) {
  ToyUniverse u;
  std::mt19937_64 rng(seed);
  for (const auto& rec : records) {
    std::vector<std::string> completions;
    auto add = [&](std::string text) {
      if (std::find(completions.begin(), completions.end(), text) == completions.end()) {
        completions.push_back(std::move(text));
      }
    };
    std::set<std::string> gt_tools;
    for (const auto& ref : rec.ground_truth) gt_tools.insert(ref.tool_name);
    std::size_t guard = 0;
    std::size_t added = 0;
    while (added < distractors && guard++ < 100 * (distractors + 1)) {
      const auto& doc = corpus[detail::draw_index(rng, corpus.size())];
      if (gt_tools.count(doc.tool_name)) continue;
      const auto before = completions.size();
      add(rec.vague + " " + doc.tool_name);
      added += completions.size() - before;
    }
    add(rec.vague);
    for (std::size_t j = 1; j <= rec.ground_truth.size(); ++j) add(mock_rewrite(rec, j));
    u.policy.add_prompt(rec.query_id, completions);
    const auto& slot = u.policy.slot(rec.query_id);
    u.sft_rows.push_back({rec.query_id, slot.index.at(mock_rewrite(rec, 1))});
  }
  return u;
}

struct ToyLoopOptions {
  std::size_t iterations = 3;
  std::size_t n = 4;
  double beta = 0.1;
  TrainConfig train;
  std::uint64_t seed = 42;
  std::size_t workers = 1;
};

struct ToyLoopResult {
  TabularPolicy initial_policy;
  TabularPolicy sft_policy;
  TabularPolicy final_policy;
  IterateResult iterations;
  std::vector<std::vector<PreferencePair>> pairs_per_iteration;
  std::vector<std::vector<double>> losses_per_iteration;
  std::vector<double> sft_losses;
};

struct ToyWarmup {
  TabularPolicy initial_policy;
  TabularPolicy sft_policy;
  std::vector<double> sft_losses;
};

inline ToyWarmup toy_warmup(const std::vector<QueryRecord>& records, const Corpus& corpus,
                            const ToyLoopOptions& options) {
  auto universe = build_toy_universe(records, corpus, options.train.distractors, options.seed);
  ToyWarmup w;
  w.initial_policy = universe.policy;
  auto sft = train_sft(universe.policy, universe.sft_rows, options.train.sft_steps,
                       options.train.sft_lr * static_cast<double>(universe.sft_rows.size()));
  w.sft_policy = std::move(sft.policy);
  w.sft_losses = std::move(sft.losses);
  return w;
}

/// Sampling backend of round t (1-based).
inline std::shared_ptr<const Backend> toy_sampler(const TabularPolicy& policy, std::uint64_t seed, std::size_t t) {
  return toy_backend(policy, seed + t, ToyDecoding::sample);
}

/// SFT warm-up, then `iterations` rounds of sample -> score -> pair -> DPO.
/// The reference is reset to the current policy at the start of each round.
inline ToyLoopResult run_toy_loop(const std::vector<QueryRecord>& records, const Retriever& retriever,
                                  const ToyLoopOptions& options,
                                  std::function<void(const std::vector<IterationState>&)> on_iteration = {}) {
  ToyLoopResult result;
  auto warm = toy_warmup(records, retriever.corpus(), options);
  result.initial_policy = std::move(warm.initial_policy);
  result.sft_policy = std::move(warm.sft_policy);
  result.sft_losses = std::move(warm.sft_losses);
  auto current = std::make_shared<TabularPolicy>(result.sft_policy);

  IterateHooks hooks;
  hooks.backend_for = [&](std::size_t t) {
    return std::make_pair(toy_sampler(*current, options.seed, t), "toy-iter" + std::to_string(t));
  };
  hooks.train = [&](std::size_t, const std::vector<PreferencePair>& pairs) {
    TabularPolicy policy = *current;
    auto batch = batch_from_pairs(policy, pairs, options.beta);
    const TabularPolicy reference = policy;
    auto trained = train_toy(policy, reference, batch, options.train.steps,
                             options.train.lr * static_cast<double>(batch.rows.size()));
    result.pairs_per_iteration.push_back(pairs);
    result.losses_per_iteration.push_back(std::move(trained.losses));
    current = std::make_shared<TabularPolicy>(std::move(trained.policy));
  };
  hooks.on_iteration = std::move(on_iteration);
  result.iterations = iterate(records, hooks, retriever, RewritePrompt::enhance(), options.iterations, options.n,
                              options.workers);
  result.final_policy = *current;
  return result;
}

inline ToyLoopOptions toy_options(const ExperimentConfig& c) {
  ToyLoopOptions o;
  o.iterations = c.iterations;
  o.n = c.n;
  o.beta = c.beta;
  o.train = c.train;
  o.seed = c.seed;
  o.workers = c.workers;
  return o;
}

// ---------------------------------------------------------------------------
// Stage pipeline

struct PipelineResult {
  ComparisonReport report;
  std::optional<DpoDataset> dataset;  // pairs stage, non-toy backends
  std::optional<ToyLoopResult> loop;  // train / iterate stages
  std::optional<ToyWarmup> warmup;    // toy backend without training
};

/// Runs the configured stage set. baseline: vague evaluation. rewrite: one
/// run per rewriter. pairs: sample, score and pair once. train: one DPO
/// round on the toy policy. iterate: the remaining rounds. With the toy
/// backend the rewriter runs are "-w/ SFT-only" and, once trained, "-w/ Full".
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const Retriever& retriever,
                                   const std::vector<QueryRecord>& records,
                                   std::shared_ptr<const Backend> backend = nullptr) {
  cfg.validate_stages();
  const std::set<std::string> stages(cfg.stages.begin(), cfg.stages.end());
  const bool toy = cfg.backend == "toy";
  const bool training = stages.count("train") > 0;
  if (training && !toy) throw Error(ErrorKind::invalid_argument, "the train stage needs the toy backend");
  if (!toy && !backend && (stages.count("rewrite") || stages.count("pairs"))) {
    throw Error(ErrorKind::invalid_argument, "a rewriter backend is required");
  }
  const NdcgConfig ndcg{cfg.cutoffs};
  const auto prompt = load_prompt(cfg);
  PipelineResult out;
  out.report.kind = "pipeline";
  out.report.retriever = std::string(retriever.kind());
  out.report.cutoffs = cfg.cutoffs;
  out.report.extra["stages"] = cfg.stages;

  std::shared_ptr<const Backend> sft_backend;
  std::shared_ptr<const Backend> full_backend;
  if (toy) {
    auto options = toy_options(cfg);
    if (training) {
      if (!stages.count("iterate")) options.iterations = 1;
      out.loop = run_toy_loop(records, retriever, options);
      sft_backend = toy_backend(out.loop->sft_policy, cfg.seed);
      full_backend = toy_backend(out.loop->final_policy, cfg.seed);
      out.report.extra["iterations"] = iteration_log_json(out.loop->iterations.states);
    } else {
      out.warmup = toy_warmup(records, retriever.corpus(), options);
      sft_backend = toy_backend(out.warmup->sft_policy, cfg.seed);
    }
  }

  if (stages.count("baseline")) {
    out.report.runs.push_back(evaluate(retriever, records, vague_texts(records), "vague", ndcg, cfg.workers));
  }
  if (stages.count("rewrite")) {
    std::vector<AblationVariant> variants;
    if (toy) {
      variants.push_back({"-w/ SFT-only", sft_backend});
      if (full_backend) variants.push_back({"-w/ Full", full_backend});
      out.report.layout = "table4";
    } else {
      variants.push_back({"+rewrite", backend});
    }
    OrderedJson accounting = OrderedJson::object();
    for (const auto& v : variants) {
      const auto rw = rewrite_queries(retriever, records, *v.backend, prompt, cfg.n, cfg.best_of_n && !toy,
                                      cfg.workers);
      out.report.runs.push_back(evaluate(retriever, records, rw.texts, v.label, ndcg, cfg.workers));
      out.report.deltas.push_back({"%Δ " + v.label, v.label, "vague"});
      accounting[v.label] = {{"backend", v.backend->name()},
                             {"queries_total", records.size()},
                             {"rewritten", rw.rewritten},
                             {"fell_back", rw.fell_back}};
    }
    out.report.extra["rewriters"] = std::move(accounting);
  }
  if (stages.count("pairs") && !training) {
    if (toy) {
      out.dataset = build_dpo_dataset(records, *toy_sampler(out.warmup->sft_policy, cfg.seed, 1), prompt, retriever,
                                      cfg.n, cfg.workers);
    } else {
      out.dataset = build_dpo_dataset(records, *backend, prompt, retriever, cfg.n, cfg.workers);
    }
    out.report.extra["pairs"] = to_json(out.dataset->summary);
  }
  return out;
}

}  // namespace toolbridge
