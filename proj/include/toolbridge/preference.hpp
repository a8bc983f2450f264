#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/metrics.hpp"
#include "toolbridge/parallel.hpp"
#include "toolbridge/retrieval.hpp"
#include "toolbridge/rewriter.hpp"

namespace toolbridge {

/// One element of the contrastive dataset: the higher-scoring rewrite is
/// `chosen`, the lower-scoring one `rejected`. score_chosen > score_rejected.
struct PreferencePair {
  std::string query_id;
  std::string prompt;  // the vague instruction
  std::string chosen;
  std::string rejected;
  double score_chosen = 0.0;
  double score_rejected = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

inline OrderedJson to_json(const PreferencePair& p) {
  OrderedJson j;
  j["query_id"] = p.query_id;
  j["prompt"] = p.prompt;
  j["chosen"] = p.chosen;
  j["rejected"] = p.rejected;
  j["score_chosen"] = p.score_chosen;
  j["score_rejected"] = p.score_rejected;
  return j;
}

inline void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path) {
  std::vector<OrderedJson> rows;
  for (const auto& p : pairs) rows.push_back(to_json(p));
  write_file_atomic(path, to_jsonl(rows));
}

inline std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
  std::vector<PreferencePair> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    try {
      PreferencePair p{j.at("query_id").get<std::string>(), j.at("prompt").get<std::string>(),
                       j.at("chosen").get<std::string>(),   j.at("rejected").get<std::string>(),
                       j.at("score_chosen").get<double>(),  j.at("score_rejected").get<double>()};
      out.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw LineError(ErrorKind::parse, path.string(), line, std::string("malformed pair: ") + e.what());
    }
  });
  return out;
}

/// Retrieval reward of one candidate: retrieve at k = 10 (k = 5 is its
/// prefix) and average NDCG@5 and NDCG@10. Fills `candidate.score`; on
/// failure the score stays empty and the reason goes to `candidate.note`.
inline std::optional<double> score_candidate(CandidateRewrite& candidate, const Retriever& retriever,
                                             const std::set<std::string>& relevant) {
  try {
    const auto ranked10 = retriever.retrieve(candidate.text, 10, candidate.query_id);
    RankedList ranked5{ranked10.query_id, {}};
    for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked10.size()); ++i) {
      ranked5.entries.push_back(ranked10.entries[i]);
    }
    candidate.score = avg_score(ranked5, ranked10, relevant);
  } catch (const Error& e) {
    candidate.score.reset();
    candidate.note = std::string("scoring failed: ") + e.what();
  }
  return candidate.score;
}

enum class PairOutcome { kept, equal_reward, insufficient };

inline std::string_view to_string(PairOutcome o) {
  switch (o) {
    case PairOutcome::kept: return "kept";
    case PairOutcome::equal_reward: return "equal_reward";
    case PairOutcome::insufficient: return "insufficient";
  }
  return "unknown";
}

struct PairDecision {
  std::optional<PreferencePair> pair;
  PairOutcome outcome = PairOutcome::insufficient;
  std::string reason;
};

/// Highest vs. lowest scoring candidate. Candidates without a score or that
/// fell back to the vague text are excluded. Ties at either end go to the
/// lowest candidate_index; fully tied sets yield no pair.
inline PairDecision decide_pair(const std::vector<CandidateRewrite>& candidates, const std::string& prompt) {
  std::vector<const CandidateRewrite*> valid;
  for (const auto& c : candidates) {
    if (c.score && !c.fallback) valid.push_back(&c);
  }
  std::stable_sort(valid.begin(), valid.end(), [](const CandidateRewrite* a, const CandidateRewrite* b) {
    return a->candidate_index < b->candidate_index;
  });
  if (valid.size() < 2) {
    return {std::nullopt, PairOutcome::insufficient,
            "need at least 2 valid candidates, have " + std::to_string(valid.size())};
  }
  const CandidateRewrite* best = valid.front();
  const CandidateRewrite* worst = valid.front();
  for (const auto* c : valid) {
    if (*c->score > *best->score) best = c;
    if (*c->score < *worst->score) worst = c;
  }
  if (!(*best->score > *worst->score) || best->text == worst->text) {
    return {std::nullopt, PairOutcome::equal_reward, "all candidates share one reward"};
  }
  PreferencePair pair{best->query_id, prompt, best->text, worst->text, *best->score, *worst->score};
  return {std::move(pair), PairOutcome::kept, {}};
}

struct RecordOutcome {
  std::string query_id;
  PairOutcome outcome = PairOutcome::insufficient;
  std::string reason;
  bool generation_failed = false;
  std::vector<CandidateRewrite> candidates;
};

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t pairs_kept = 0;
  std::size_t dropped_equal = 0;
  std::size_t dropped_insufficient = 0;
  std::size_t generation_failures = 0;
  double mean_score_chosen = 0.0;
  double mean_score_rejected = 0.0;
  double mean_candidate_score = 0.0;  // over every scored, non-fallback candidate
  std::size_t scored_candidates = 0;
  std::vector<std::string> warnings;
};

inline OrderedJson to_json(const DatasetSummary& s) {
  OrderedJson j;
  j["records"] = s.records;
  j["pairs_kept"] = s.pairs_kept;
  j["dropped_equal"] = s.dropped_equal;
  j["dropped_insufficient"] = s.dropped_insufficient;
  j["generation_failures"] = s.generation_failures;
  j["mean_score_chosen"] = s.mean_score_chosen;
  j["mean_score_rejected"] = s.mean_score_rejected;
  j["mean_candidate_score"] = s.mean_candidate_score;
  j["scored_candidates"] = s.scored_candidates;
  j["warnings"] = s.warnings;
  return j;
}

struct DpoDataset {
  std::vector<PreferencePair> pairs;  // input order
  std::vector<RecordOutcome> records;
  DatasetSummary summary;
};

/// Scores already-sampled candidates and builds one optional pair per record.
inline DpoDataset pairs_from_samples(const std::vector<QueryRecord>& records, std::vector<SampleResult> samples,
                                     const Retriever& retriever, std::size_t workers) {
  if (samples.size() != records.size()) throw Error(ErrorKind::invalid_argument, "one sample set per record");
  DpoDataset out;
  out.records.resize(records.size());
  std::vector<std::optional<PreferencePair>> pairs(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    auto& rec = out.records[i];
    rec.query_id = records[i].query_id;
    rec.generation_failed = samples[i].failed;
    rec.candidates = std::move(samples[i].candidates);
    const auto relevant = retriever.corpus().relevant_ids(records[i]);
    for (auto& c : rec.candidates) {
      if (!c.fallback) score_candidate(c, retriever, relevant);
    }
    auto decision = decide_pair(rec.candidates, records[i].vague);
    rec.outcome = decision.outcome;
    rec.reason = decision.reason;
    pairs[i] = std::move(decision.pair);
  });
  auto& s = out.summary;
  s.records = records.size();
  double chosen = 0.0;
  double rejected = 0.0;
  double all = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = out.records[i];
    if (rec.generation_failed) ++s.generation_failures;
    for (const auto& c : rec.candidates) {
      if (c.score && !c.fallback) {
        all += *c.score;
        ++s.scored_candidates;
      }
    }
    switch (rec.outcome) {
      case PairOutcome::kept:
        ++s.pairs_kept;
        chosen += pairs[i]->score_chosen;
        rejected += pairs[i]->score_rejected;
        out.pairs.push_back(std::move(*pairs[i]));
        break;
      case PairOutcome::equal_reward: ++s.dropped_equal; break;
      case PairOutcome::insufficient: ++s.dropped_insufficient; break;
    }
  }
  if (s.pairs_kept) {
    s.mean_score_chosen = chosen / static_cast<double>(s.pairs_kept);
    s.mean_score_rejected = rejected / static_cast<double>(s.pairs_kept);
  }
  if (s.scored_candidates) s.mean_candidate_score = all / static_cast<double>(s.scored_candidates);
  if (s.pairs_kept == 0) s.warnings.push_back("no preference pairs were produced");
  return out;
}

/// Sample, score and pair every record. Per-record failures are recorded in
/// the outcome list; the caller decides whether zero pairs is fatal.
inline DpoDataset build_dpo_dataset(const std::vector<QueryRecord>& records, const Backend& backend,
                                    const RewritePrompt& prompt, const Retriever& retriever, std::size_t n,
                                    std::size_t workers = 1) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "n must be at least 1");
  auto samples = sample_batch(backend, prompt, records, n, workers);
  auto out = pairs_from_samples(records, std::move(samples), retriever, workers);
  if (n < 2) {
    out.summary.warnings.insert(out.summary.warnings.begin(),
                                "n = " + std::to_string(n) + ": pairing needs at least 2 candidates per query");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Iterative loop

struct IterationState {
  std::size_t iteration = 0;  // 1-based
  std::string policy_tag;
  std::size_t pairs_emitted = 0;
  double mean_score = 0.0;  // mean candidate Score of this round
  DatasetSummary summary;
};

inline OrderedJson to_json(const IterationState& s) {
  OrderedJson j;
  j["iteration"] = s.iteration;
  j["policy_tag"] = s.policy_tag;
  j["pairs_emitted"] = s.pairs_emitted;
  j["mean_score"] = s.mean_score;
  j["summary"] = to_json(s.summary);
  return j;
}

struct IterateResult {
  std::vector<IterationState> states;
  bool stopped_early = false;
  std::optional<std::string> aborted;  // trainer failure message
};

struct IterateHooks {
  /// Backend for iteration t (1-based) and a tag naming that policy.
  std::function<std::pair<std::shared_ptr<const Backend>, std::string>(std::size_t)> backend_for;
  /// Consumes the round's pairs (trains the next policy).
  std::function<void(std::size_t, const std::vector<PreferencePair>&)> train;
  /// Called after each completed iteration (persist state).
  std::function<void(const std::vector<IterationState>&)> on_iteration;
};

/// Sample -> score -> pair -> train, T times. Stops early when a round yields
/// no pairs; a trainer failure aborts and keeps the states of earlier rounds.
inline IterateResult iterate(const std::vector<QueryRecord>& records, const IterateHooks& hooks,
                             const Retriever& retriever, const RewritePrompt& prompt, std::size_t iterations,
                             std::size_t n, std::size_t workers = 1) {
  if (iterations == 0) throw Error(ErrorKind::invalid_argument, "iterations must be at least 1");
  if (!hooks.backend_for || !hooks.train) throw Error(ErrorKind::invalid_argument, "iterate needs backend and trainer hooks");
  IterateResult result;
  for (std::size_t t = 1; t <= iterations; ++t) {
    auto [backend, tag] = hooks.backend_for(t);
    auto data = build_dpo_dataset(records, *backend, prompt, retriever, n, workers);
    IterationState state{t, tag, data.pairs.size(), data.summary.mean_candidate_score, data.summary};
    if (data.pairs.empty()) {
      result.states.push_back(std::move(state));
      result.stopped_early = true;
      if (hooks.on_iteration) hooks.on_iteration(result.states);
      break;
    }
    try {
      hooks.train(t, data.pairs);
    } catch (const std::exception& e) {
      result.aborted = "iteration " + std::to_string(t) + ": trainer failed: " + e.what();
      break;
    }
    result.states.push_back(std::move(state));
    if (hooks.on_iteration) hooks.on_iteration(result.states);
  }
  return result;
}

inline OrderedJson iteration_log_json(const std::vector<IterationState>& states) {
  OrderedJson j;
  j["iterations"] = OrderedJson::array();
  for (const auto& s : states) j["iterations"].push_back(to_json(s));
  return j;
}

}  // namespace toolbridge
