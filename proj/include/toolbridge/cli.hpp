#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "toolbridge/harness.hpp"
#include "toolbridge/http_backend.hpp"

#ifndef TOOLBRIDGE_BUILD_ID
#define TOOLBRIDGE_BUILD_ID "dev"
#endif

namespace toolbridge {

inline constexpr const char* kVersion = "0.1.0";

inline std::string version_string() { return std::string("toolbridge ") + kVersion + " (" + TOOLBRIDGE_BUILD_ID + ")"; }

namespace cli {

// Flag groups attached to a subcommand.
enum Group : unsigned {
  kData = 1u << 0,       // --corpus --queries
  kRetriever = 1u << 1,  // --retriever --k --index
  kBackend = 1u << 2,    // --backend --n --template --policy
  kTrain = 1u << 3,      // --beta --iterations
  kRun = 1u << 4,        // --seed --workers --out
};

struct Flags {
  std::string config;
  std::string corpus;
  std::string queries;
  std::string retriever;
  std::string index;
  std::size_t k = 0;
  std::string backend;
  std::size_t n = 0;
  std::string template_id;
  std::string policy;
  double beta = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out;
  std::map<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

inline void add_flags(CLI::App* app, Flags& f, unsigned groups) {
  f.opts["config"] = app->add_option("--config", f.config, "JSON config file; flags override its values");
  if (groups & kData) {
    f.opts["corpus"] = app->add_option("--corpus", f.corpus, "Tool corpus (JSONL)");
    f.opts["queries"] = app->add_option("--queries", f.queries, "Query records (JSONL)");
  }
  if (groups & kRetriever) {
    f.opts["retriever"] = app->add_option("--retriever", f.retriever, "Retriever kind")
                              ->check(CLI::IsMember({"bm25", "tfidf", "dense", "hybrid"}));
    f.opts["k"] = app->add_option("--k", f.k, "Number of results to retrieve")->check(CLI::PositiveNumber);
    f.opts["index"] = app->add_option("--index", f.index, "Lexical index snapshot written by `index`");
  }
  if (groups & kBackend) {
    f.opts["backend"] = app->add_option("--backend", f.backend, "Rewriter backend")
                            ->check(CLI::IsMember({"http", "mock", "toy", "identity"}));
    f.opts["n"] = app->add_option("--n", f.n, "Candidates sampled per query (default 4)")->check(CLI::PositiveNumber);
    f.opts["template"] = app->add_option("--template", f.template_id, "Built-in prompt template")
                             ->check(CLI::IsMember({"enhance", "vague_generation"}));
    f.opts["policy"] = app->add_option("--policy", f.policy, "Tabular policy file for the toy backend");
  }
  if (groups & kTrain) {
    f.opts["beta"] = app->add_option("--beta", f.beta, "DPO temperature beta")->check(CLI::PositiveNumber);
    f.opts["iterations"] =
        app->add_option("--iterations", f.iterations, "Preference-loop iterations")->check(CLI::PositiveNumber);
  }
  if (groups & kRun) {
    f.opts["seed"] = app->add_option("--seed", f.seed, "Random seed");
    f.opts["workers"] = app->add_option("--workers", f.workers, "Worker threads (default: all cores)")
                            ->check(CLI::PositiveNumber);
    f.opts["out"] = app->add_option("--out", f.out, "Output directory");
  }
}

/// defaults <- config file <- flags.
inline ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c;
  if (!f.config.empty()) c = load_config_file(f.config, c);
  if (f.given("corpus")) c.corpus = f.corpus;
  if (f.given("queries")) c.queries = f.queries;
  if (f.given("retriever")) c.retriever.kind = f.retriever;
  if (f.given("index")) c.retriever.index = f.index;
  if (f.given("k")) c.k = f.k;
  if (f.given("backend")) c.backend = f.backend;
  if (f.given("n")) c.n = f.n;
  if (f.given("template")) c.template_id = f.template_id;
  if (f.given("policy")) c.policy = f.policy;
  if (f.given("beta")) c.beta = f.beta;
  if (f.given("iterations")) c.iterations = f.iterations;
  if (f.given("seed")) c.seed = f.seed;
  if (f.given("workers")) c.workers = f.workers;
  if (f.given("out")) c.out = f.out;
  c.http.seed = c.seed;
  if (c.backend == "http") {
    c.http.kind = BackendConfig::Kind::http_endpoint;
    apply_environment(c.http);
  }
  c.validate();
  return c;
}

inline void require_path(const std::filesystem::path& p, const char* field) {
  if (p.empty()) throw ConfigError(std::string("/") + field, "is required");
}

struct Loaded {
  std::shared_ptr<const Corpus> corpus;
  std::vector<QueryRecord> records;
  std::shared_ptr<const Retriever> retriever;
};

inline std::shared_ptr<const Embedder> make_embedder(const ExperimentConfig& c) {
  if (c.retriever.embedder == "hashing") return std::make_shared<HashingEmbedder>(c.retriever.dimension);
  if (c.retriever.embedder == "http") {
    BackendConfig bc;
    bc.kind = BackendConfig::Kind::http_endpoint;
    bc.endpoint = c.retriever.embedding_endpoint;
    bc.model = c.retriever.embedding_model;
    bc.timeout_seconds = c.http.timeout_seconds;
    bc.max_retries = c.http.max_retries;
    apply_environment(bc);
    if (bc.endpoint.empty()) throw ConfigError("/dense/endpoint", "is required for the http embedder");
    return std::make_shared<HttpEmbedder>(bc, c.retriever.dimension);
  }
  throw ConfigError("/dense/embedder", "must be hashing or http");
}

inline Loaded load_inputs(const ExperimentConfig& c, bool need_queries, bool need_retriever) {
  require_path(c.corpus, "corpus");
  Loaded l;
  l.corpus = std::make_shared<const Corpus>(load_corpus(c.corpus));
  if (need_queries) {
    require_path(c.queries, "queries");
    l.records = load_queries(c.queries, *l.corpus);
  }
  if (need_retriever) {
    const bool dense = c.retriever.kind == "dense" || c.retriever.kind == "hybrid";
    l.retriever = make_retriever(c.retriever, l.corpus, dense ? make_embedder(c) : nullptr);
  }
  return l;
}

/// Backend named by the config. The toy backend needs a policy file.
inline std::shared_ptr<const Backend> make_backend(const ExperimentConfig& c) {
  if (c.backend == "mock") {
    return std::make_shared<MockBackend>(c.mock_mode == "oracle" ? MockBackend::Mode::oracle
                                                                 : MockBackend::Mode::graded);
  }
  if (c.backend == "identity") return std::make_shared<IdentityBackend>();
  if (c.backend == "http") return std::make_shared<HttpBackend>(c.http);
  if (c.backend == "toy") {
    if (c.policy.empty()) throw ConfigError("/policy", "the toy backend needs a policy file");
    return toy_backend(load_policy(c.policy), c.seed);
  }
  throw ConfigError("/backend", "unknown backend '" + c.backend + "'");
}

inline void echo_config(const ExperimentConfig& c, std::ostream& err) { err << "config: " << to_json(c).dump() << "\n"; }

inline std::optional<std::filesystem::path> out_dir(const ExperimentConfig& c) {
  if (c.out.empty()) return std::nullopt;
  return c.out;
}

inline void emit_report(const ExperimentConfig& c, const ComparisonReport& report, std::ostream& out) {
  if (auto dir = out_dir(c)) {
    OutputLock lock(*dir);
    write_report_files(*dir, report, to_json(c));
  }
  out << report_markdown(report);
}

// Groups candidates by record, in record order.
inline std::vector<SampleResult> samples_from_candidates(const std::vector<QueryRecord>& records,
                                                         const std::filesystem::path& path) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) index[records[i].query_id] = i;
  std::vector<SampleResult> samples(records.size());
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    CandidateRewrite c;
    try {
      c = candidate_from_json(j);
    } catch (const Json::exception& e) {
      throw LineError(ErrorKind::parse, path.string(), line, std::string("malformed candidate: ") + e.what());
    }
    auto it = index.find(c.query_id);
    if (it == index.end()) {
      throw LineError(ErrorKind::unresolved_reference, path.string(), line, "unknown query_id '" + c.query_id + "'");
    }
    samples[it->second].candidates.push_back(std::move(c));
  });
  for (auto& s : samples) {
    std::stable_sort(s.candidates.begin(), s.candidates.end(),
                     [](const CandidateRewrite& a, const CandidateRewrite& b) {
                       return a.candidate_index < b.candidate_index;
                     });
  }
  return samples;
}

inline std::string candidates_jsonl(const std::vector<SampleResult>& samples) {
  std::string s;
  for (const auto& r : samples) {
    for (const auto& c : r.candidates) s += to_json(c).dump() + "\n";
  }
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace cli

/// Runs one command line (without the program name). Returns the exit status.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli;
  CLI::App app{"Tool retrieval with vague instructions: indexing, evaluation, rewriting and preference training."};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  // One flag set per subcommand; std::map keeps the bound addresses stable.
  std::map<std::string, Flags> flag_sets;
  auto sub = [&](const char* name, const char* help, unsigned groups) {
    auto* cmd = app.add_subcommand(name, help);
    add_flags(cmd, flag_sets[name], groups);
    return cmd;
  };
  std::string query_text;
  bool as_json = false;
  std::string mode = "plain";
  bool best_of_n = false;
  std::string policy_sft;
  std::string candidates_path;
  std::string pairs_path;
  std::size_t steps = 50;
  double lr = 1.0;
  std::string stages;
  std::size_t num_tools = 0;
  std::size_t num_queries = 0;
  std::size_t vocab = 0;
  std::string in_dir;
  std::vector<std::string> inputs;
  std::string subset;

  auto* index = sub("index", "Build a retriever and persist it", kData | kRetriever | kRun);

  auto* retrieve = sub("retrieve", "Rank the corpus for one query", kData | kRetriever | kRun);
  retrieve->add_option("--query", query_text, "Query text")->required();
  retrieve->add_flag("--json", as_json, "Print the ranked list as JSON");

  auto* eval = sub("eval", "Evaluate a retriever on vague, specific or rewritten queries", kData | kRetriever | kBackend | kRun);
  eval->add_option("--mode", mode, "plain | degradation | trb | ablation")
      ->check(CLI::IsMember({"plain", "degradation", "trb", "ablation"}));
  eval->add_flag("--best-of-n", best_of_n, "trb: keep the best of --n candidates by top retrieval score");
  eval->add_option("--policy-sft", policy_sft, "ablation: policy before preference training");

  auto* rewrite = sub("rewrite", "Sample rewrite candidates for every query", kData | kBackend | kRun);

  auto* score = sub("score", "Score rewrite candidates by retrieval quality", kData | kRetriever | kRun);
  score->add_option("--candidates", candidates_path, "Candidates written by `rewrite`")->required();

  auto* pairs = sub("pairs", "Build preference pairs (sample, score, pair)", kData | kRetriever | kBackend | kRun);
  pairs->add_option("--candidates", candidates_path, "Reuse candidates written by `rewrite`");

  auto* train = sub("train-toy", "Train a tabular policy on preference pairs", kBackend | kTrain | kRun);
  train->add_option("--pairs", pairs_path, "Pairs written by `pairs`")->required();
  train->add_option("--steps", steps, "Gradient steps")->check(CLI::PositiveNumber);
  train->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);

  auto* iter = sub("iterate", "Closed toy loop: SFT warm-up, then iterative DPO", kData | kRetriever | kBackend | kTrain | kRun);

  auto* run = sub("run", "Run a set of pipeline stages", kData | kRetriever | kBackend | kTrain | kRun);
  run->add_option("--stages", stages, "Comma-separated subset of baseline,rewrite,pairs,train,iterate");

  auto* synth = sub("synth", "Generate a synthetic corpus and query set", kRun);
  synth->add_option("--tools", num_tools, "Number of tools")->check(CLI::PositiveNumber);
  synth->add_option("--num-queries", num_queries, "Number of queries")->check(CLI::PositiveNumber);
  synth->add_option("--vocab", vocab, "Vocabulary size")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Recompute and re-render a report from its per-query records");
  report->add_option("--in", in_dir, "Directory holding report.json and per_query.jsonl")->required();
  std::string report_out;
  report->add_option("--out", report_out, "Write the rebuilt report here");

  auto* convert = sub("convert", "Convert ToolBench query files to native corpus and queries", kRun);
  convert->add_option("--input", inputs, "ToolBench query files (JSON arrays)")->required()->check(CLI::ExistingFile);
  convert->add_option("--subset", subset, "Subset tag for every converted query")
      ->check(CLI::IsMember({"I1", "I2", "I3", "other"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) out << sub->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*report) {
      const std::filesystem::path dir = in_dir;
      auto rebuilt = rebuild_report(dir / "report.json", dir / "per_query.jsonl");
      const auto original = Json::parse(read_text_file(dir / "report.json"));
      const auto recomputed = Json::parse(report_json(rebuilt).dump());
      if (original != recomputed) {
        throw Error(ErrorKind::parse, "report.json aggregates do not match per_query.jsonl");
      }
      if (!report_out.empty()) {
        const std::filesystem::path dst = report_out;
        OutputLock lock(dst);
        write_file_atomic(dst / "report.md", report_markdown(rebuilt));
        write_file_atomic(dst / "report.json", report_json(rebuilt).dump(2) + "\n");
      }
      out << report_markdown(rebuilt);
      return 0;
    }

    const auto* chosen = app.get_subcommands().front();
    auto cfg = resolve(flag_sets.at(chosen->get_name()));
    if (*run && !stages.empty()) {
      cfg.stages = split_list(stages);
      cfg.validate_stages();
    }
    if (*eval) cfg.best_of_n = cfg.best_of_n || best_of_n;
    if (*synth) {
      if (num_tools) cfg.synth.num_tools = num_tools;
      if (num_queries) cfg.synth.num_queries = num_queries;
      if (vocab) cfg.synth.vocab_size = vocab;
      cfg.synth.seed = cfg.seed;
    }
    if (*iter) {
      if (cfg.backend != "toy") throw ConfigError("/backend", "iterate trains the toy policy; use --backend toy");
      cfg.stages = {"baseline", "rewrite", "pairs", "train", "iterate"};
    }
    echo_config(cfg, err);

    if (*synth) {
      if (cfg.out.empty()) throw ConfigError("/out", "is required");
      auto data = gen_synthetic(cfg.synth);
      OutputLock lock(cfg.out);
      const auto corpus = Corpus::from_docs(data.docs, "synthetic");
      save_corpus(corpus, cfg.out / "corpus.jsonl");
      save_queries(data.queries, cfg.out / "queries.jsonl");
      out << "wrote " << corpus.size() << " tools and " << data.queries.size() << " queries to " << cfg.out.string()
          << "\n";
      return 0;
    }

    if (*convert) {
      if (cfg.out.empty()) throw ConfigError("/out", "is required");
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      auto data = convert_toolbench(paths, subset.empty() ? std::nullopt : parse_subset(subset));
      const auto corpus = Corpus::from_docs(data.docs, "converted");
      for (const auto& q : data.queries) {
        auto missing = validate_query(q, corpus);
        if (!missing.empty()) throw Error(ErrorKind::unresolved_reference, q.query_id + ": " + missing.front());
      }
      OutputLock lock(cfg.out);
      save_corpus(corpus, cfg.out / "corpus.jsonl");
      save_queries(data.queries, cfg.out / "queries.jsonl");
      out << "converted " << data.queries.size() << " queries over " << corpus.size() << " APIs";
      if (data.queries_without_vague) {
        out << " (" << data.queries_without_vague << " without a vague rewrite; the original text was used)";
      }
      out << "\n";
      return 0;
    }

    if (*index) {
      if (cfg.out.empty()) throw ConfigError("/out", "is required");
      auto l = load_inputs(cfg, false, false);
      OutputLock lock(cfg.out);
      const auto& kind = cfg.retriever.kind;
      if (kind == "bm25" || kind == "hybrid") {
        save_index_snapshot(Bm25Index(l.corpus, cfg.retriever.bm25), cfg.out / "index.json");
      } else if (kind == "tfidf") {
        save_index_snapshot(TfidfIndex(l.corpus), cfg.out / "index.json");
      }
      if (kind == "dense" || kind == "hybrid") {
        save_embeddings(embed_corpus(*l.corpus, *make_embedder(cfg)), cfg.out / "embeddings.jsonl");
      }
      write_file_atomic(cfg.out / "run_config.json", to_json(cfg).dump(2) + "\n");
      out << "indexed " << l.corpus->size() << " documents (" << kind << ") into " << cfg.out.string() << "\n";
      return 0;
    }

    if (*retrieve) {
      auto l = load_inputs(cfg, false, true);
      const auto ranked = l.retriever->retrieve(query_text, cfg.k);
      if (as_json) {
        OrderedJson j = OrderedJson::array();
        for (std::size_t i = 0; i < ranked.size(); ++i) {
          j.push_back({{"rank", i + 1}, {"doc_id", ranked.entries[i].doc_id}, {"score", ranked.entries[i].score}});
        }
        out << j.dump() << "\n";
      } else {
        for (std::size_t i = 0; i < ranked.size(); ++i) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.6f", ranked.entries[i].score);
          out << (i + 1) << "\t" << ranked.entries[i].doc_id << "\t" << buf << "\n";
        }
      }
      return 0;
    }

    if (*eval) {
      auto l = load_inputs(cfg, true, true);
      const NdcgConfig ndcg{cfg.cutoffs};
      ComparisonReport rep;
      if (mode == "plain") {
        rep = run_plain_eval(*l.retriever, l.records, ndcg, cfg.workers);
      } else if (mode == "degradation") {
        rep = run_degradation(*l.retriever, l.records, ndcg, cfg.workers);
      } else if (mode == "trb") {
        auto backend = make_backend(cfg);
        rep = run_trb(*l.retriever, l.records, *backend, load_prompt(cfg), cfg.n, cfg.best_of_n, ndcg, cfg.workers);
      } else {
        std::vector<AblationVariant> variants;
        if (!policy_sft.empty() || cfg.backend == "toy") {
          if (policy_sft.empty()) throw ConfigError("/policy_sft", "ablation with the toy backend needs --policy-sft");
          if (cfg.policy.empty()) throw ConfigError("/policy", "ablation with the toy backend needs --policy");
          variants.push_back({"-w/ SFT-only", toy_backend(load_policy(policy_sft), cfg.seed)});
          variants.push_back({"-w/ Full", toy_backend(load_policy(cfg.policy), cfg.seed)});
        } else {
          auto backend = make_backend(cfg);
          variants.push_back({backend->name(), backend});
        }
        rep = run_ablation(*l.retriever, l.records, variants, load_prompt(cfg), ndcg, cfg.workers);
      }
      emit_report(cfg, rep, out);
      return 0;
    }

    if (*rewrite) {
      auto l = load_inputs(cfg, true, false);
      auto backend = make_backend(cfg);
      auto samples = sample_batch(*backend, load_prompt(cfg), l.records, cfg.n, cfg.workers);
      std::size_t fell = 0;
      for (const auto& s : samples) fell += s.replaced;
      if (auto dir = out_dir(cfg)) {
        OutputLock lock(*dir);
        write_file_atomic(*dir / "candidates.jsonl", candidates_jsonl(samples));
        write_file_atomic(*dir / "run_config.json", to_json(cfg).dump(2) + "\n");
        out << "wrote " << samples.size() * cfg.n << " candidates (" << fell << " fell back) to "
            << (*dir / "candidates.jsonl").string() << "\n";
      } else {
        out << candidates_jsonl(samples);
      }
      return 0;
    }

    if (*score) {
      auto l = load_inputs(cfg, true, true);
      auto samples = samples_from_candidates(l.records, candidates_path);
      parallel_for(l.records.size(), cfg.workers, [&](std::size_t i) {
        const auto relevant = l.corpus->relevant_ids(l.records[i]);
        for (auto& c : samples[i].candidates) {
          if (!c.fallback) score_candidate(c, *l.retriever, relevant);
        }
      });
      if (auto dir = out_dir(cfg)) {
        OutputLock lock(*dir);
        write_file_atomic(*dir / "scored.jsonl", candidates_jsonl(samples));
        write_file_atomic(*dir / "run_config.json", to_json(cfg).dump(2) + "\n");
        out << "scored candidates written to " << (*dir / "scored.jsonl").string() << "\n";
      } else {
        out << candidates_jsonl(samples);
      }
      return 0;
    }

    if (*pairs) {
      auto l = load_inputs(cfg, true, true);
      DpoDataset data;
      if (!candidates_path.empty()) {
        data = pairs_from_samples(l.records, samples_from_candidates(l.records, candidates_path), *l.retriever,
                                  cfg.workers);
      } else {
        auto backend = make_backend(cfg);
        data = build_dpo_dataset(l.records, *backend, load_prompt(cfg), *l.retriever, cfg.n, cfg.workers);
      }
      for (const auto& w : data.summary.warnings) err << "warning: " << w << "\n";
      if (auto dir = out_dir(cfg)) {
        OutputLock lock(*dir);
        save_pairs(data.pairs, *dir / "pairs.jsonl");
        write_file_atomic(*dir / "summary.json", to_json(data.summary).dump(2) + "\n");
        write_file_atomic(*dir / "run_config.json", to_json(cfg).dump(2) + "\n");
      }
      out << to_json(data.summary).dump(2) << "\n";
      if (data.pairs.empty()) throw Error(ErrorKind::no_pairs, "no preference pairs were produced");
      return 0;
    }

    if (*train) {
      auto pair_list = load_pairs(pairs_path);
      if (pair_list.empty()) throw Error(ErrorKind::no_pairs, pairs_path + ": no pairs to train on");
      TabularPolicy policy = cfg.policy.empty() ? TabularPolicy{} : load_policy(cfg.policy);
      auto batch = batch_from_pairs(policy, pair_list, cfg.beta);
      const TabularPolicy reference = policy;
      auto result = train_toy(policy, reference, batch, steps, lr);
      if (auto dir = out_dir(cfg)) {
        OutputLock lock(*dir);
        save_policy(result.policy, *dir / "policy.json");
        write_file_atomic(*dir / "training_log.csv", training_log_csv(result.losses));
        write_file_atomic(*dir / "run_config.json", to_json(cfg).dump(2) + "\n");
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, "loss %.6f -> %.6f over %zu steps\n", result.losses.front(),
                    result.losses.back(), result.losses.size() - 1);
      out << buf;
      return 0;
    }

    if (*iter || *run) {
      auto l = load_inputs(cfg, true, true);
      std::shared_ptr<const Backend> backend;
      if (cfg.backend != "toy") backend = make_backend(cfg);
      std::optional<OutputLock> lock;
      if (auto dir = out_dir(cfg)) lock.emplace(*dir);
      auto result = run_pipeline(cfg, *l.retriever, l.records, backend);
      if (auto dir = out_dir(cfg)) {
        write_report_files(*dir, result.report, to_json(cfg));
        if (result.dataset) {
          save_pairs(result.dataset->pairs, *dir / "pairs.jsonl");
          write_file_atomic(*dir / "summary.json", to_json(result.dataset->summary).dump(2) + "\n");
        }
        if (result.warmup) save_policy(result.warmup->sft_policy, *dir / "policy_sft.json");
        if (result.loop) {
          const auto& loop = *result.loop;
          save_policy(loop.sft_policy, *dir / "policy_sft.json");
          save_policy(loop.final_policy, *dir / "policy.json");
          write_file_atomic(*dir / "iterations.json", iteration_log_json(loop.iterations.states).dump(2) + "\n");
          if (!loop.pairs_per_iteration.empty()) save_pairs(loop.pairs_per_iteration.front(), *dir / "pairs.jsonl");
          for (std::size_t t = 0; t < loop.pairs_per_iteration.size(); ++t) {
            save_pairs(loop.pairs_per_iteration[t], *dir / ("pairs_iter" + std::to_string(t + 1) + ".jsonl"));
            write_file_atomic(*dir / ("training_log_iter" + std::to_string(t + 1) + ".csv"),
                              training_log_csv(loop.losses_per_iteration[t]));
          }
        }
      }
      if (result.loop) {
        for (const auto& s : result.loop->iterations.states) {
          char buf[128];
          std::snprintf(buf, sizeof buf, "iteration %zu: %zu pairs, mean candidate score %.4f\n", s.iteration,
                        s.pairs_emitted, s.mean_score);
          out << buf;
        }
        if (result.loop->iterations.stopped_early) out << "stopped early: a round produced no pairs\n";
        if (result.loop->iterations.aborted) {
          throw Error(ErrorKind::divergence, "training aborted: " + *result.loop->iterations.aborted);
        }
      }
      if (result.dataset) {
        for (const auto& w : result.dataset->summary.warnings) err << "warning: " << w << "\n";
      }
      out << report_markdown(result.report);
      return 0;
    }
    throw Error(ErrorKind::invalid_argument, "no subcommand");
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace toolbridge
