#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/parallel.hpp"
#include "toolbridge/retrieval.hpp"

namespace toolbridge {

/// NDCG@k with binary relevance and a log2(rank + 1) discount. The ideal DCG
/// is truncated at min(k, |relevant|), so the result lies in [0, 1].
inline double ndcg_at_k(std::span<const std::string> ranked_ids, const std::set<std::string>& relevant,
                        std::size_t k) {
  if (relevant.empty()) throw Error(ErrorKind::invalid_argument, "ndcg needs a non-empty ground truth");
  if (k == 0) throw Error(ErrorKind::invalid_argument, "ndcg cutoff must be at least 1");
  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranked_ids.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked_ids[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

inline double ndcg_at_k(const RankedList& ranked, const std::set<std::string>& relevant, std::size_t k) {
  const auto ids = ranked.doc_ids();
  return ndcg_at_k(std::span<const std::string>(ids), relevant, k);
}

/// Retrieval reward of a rewrite: mean of NDCG@5 and NDCG@10.
inline double avg_score(const RankedList& ranked5, const RankedList& ranked10, const std::set<std::string>& relevant) {
  return (ndcg_at_k(ranked5, relevant, 5) + ndcg_at_k(ranked10, relevant, 10)) / 2.0;
}

/// Signed percentage change from `old_value` to `new_value`.
inline double relative_delta(double new_value, double old_value) {
  if (!(old_value > 0.0)) throw Error(ErrorKind::invalid_argument, "relative delta needs a positive baseline");
  return (new_value - old_value) / old_value * 100.0;
}

/// The "Avg." delta column: mean of the per-cutoff deltas, not the delta of
/// the averaged scores.
inline double avg_relative_delta(std::span<const double> new_values, std::span<const double> old_values) {
  if (new_values.size() != old_values.size() || new_values.empty()) {
    throw Error(ErrorKind::invalid_argument, "avg delta needs matching, non-empty value lists");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < new_values.size(); ++i) sum += relative_delta(new_values[i], old_values[i]);
  return sum / static_cast<double>(new_values.size());
}

struct NdcgConfig {
  std::vector<std::size_t> cutoffs{5, 10};

  void validate() const {
    if (cutoffs.empty()) throw Error(ErrorKind::invalid_argument, "at least one NDCG cutoff is required");
    for (auto c : cutoffs) {
      if (c == 0) throw Error(ErrorKind::invalid_argument, "NDCG cutoffs must be >= 1");
    }
  }
  std::size_t max_cutoff() const { return *std::max_element(cutoffs.begin(), cutoffs.end()); }
};

struct QueryEval {
  std::string query_id;
  SubsetTag subset = SubsetTag::other;
  std::vector<double> ndcg;  // aligned with the report's cutoffs

  bool operator==(const QueryEval&) const = default;
};

struct SubsetSummary {
  std::string name;  // I1 / I2 / I3 / other / all
  std::size_t count = 0;
  std::vector<double> mean;  // per cutoff
  double avg = 0.0;          // mean over cutoffs
};

struct DeltaSummary {
  std::string name;
  std::vector<std::optional<double>> delta;  // per cutoff, percent
  std::optional<double> avg;
};

/// Per-query NDCG values of one evaluated query set.
struct EvalReport {
  std::string label;
  std::vector<std::size_t> cutoffs{5, 10};
  std::vector<QueryEval> per_query;

  /// Arithmetic means per subset (only subsets that occur) followed by "all".
  /// Sums run in query_id order.
  std::vector<SubsetSummary> summaries() const {
    std::vector<const QueryEval*> sorted;
    for (const auto& q : per_query) sorted.push_back(&q);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const QueryEval* a, const QueryEval* b) { return a->query_id < b->query_id; });
    std::vector<SubsetSummary> out;
    auto summarize = [&](const std::string& name, auto&& keep) {
      SubsetSummary s;
      s.name = name;
      s.mean.assign(cutoffs.size(), 0.0);
      for (const auto* q : sorted) {
        if (!keep(*q)) continue;
        ++s.count;
        for (std::size_t c = 0; c < cutoffs.size(); ++c) s.mean[c] += q->ndcg[c];
      }
      if (s.count == 0) return;
      for (auto& m : s.mean) m /= static_cast<double>(s.count);
      double total = 0.0;
      for (double m : s.mean) total += m;
      s.avg = total / static_cast<double>(s.mean.size());
      out.push_back(std::move(s));
    };
    for (auto tag : {SubsetTag::I1, SubsetTag::I2, SubsetTag::I3, SubsetTag::other}) {
      summarize(std::string(to_string(tag)), [tag](const QueryEval& q) { return q.subset == tag; });
    }
    summarize("all", [](const QueryEval&) { return true; });
    return out;
  }

  SubsetSummary overall() const {
    auto all = summaries();
    if (all.empty()) return SubsetSummary{"all", 0, std::vector<double>(cutoffs.size(), 0.0), 0.0};
    return all.back();
  }
};

/// Relative change of `current` against `baseline`, per shared subset.
/// Deltas with a zero baseline are left empty.
inline std::vector<DeltaSummary> compare_reports(const EvalReport& current, const EvalReport& baseline) {
  if (current.cutoffs != baseline.cutoffs) throw Error(ErrorKind::invalid_argument, "reports use different cutoffs");
  const auto now = current.summaries();
  const auto before = baseline.summaries();
  std::vector<DeltaSummary> out;
  for (const auto& s : now) {
    auto it = std::find_if(before.begin(), before.end(), [&](const SubsetSummary& b) { return b.name == s.name; });
    if (it == before.end()) continue;
    DeltaSummary d;
    d.name = s.name;
    bool complete = true;
    double sum = 0.0;
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      if (it->mean[c] > 0.0) {
        d.delta.push_back(relative_delta(s.mean[c], it->mean[c]));
        sum += *d.delta.back();
      } else {
        d.delta.push_back(std::nullopt);
        complete = false;
      }
    }
    if (complete) d.avg = sum / static_cast<double>(s.mean.size());
    out.push_back(std::move(d));
  }
  return out;
}

/// Retrieves once at the deepest cutoff and scores every query.
/// `texts[i]` is the instruction issued for `records[i]`.
inline EvalReport evaluate(const Retriever& retriever, const std::vector<QueryRecord>& records,
                           const std::vector<std::string>& texts, std::string label, const NdcgConfig& config = {},
                           std::size_t workers = 1) {
  config.validate();
  if (texts.size() != records.size()) throw Error(ErrorKind::invalid_argument, "one text per record is required");
  EvalReport report;
  report.label = std::move(label);
  report.cutoffs = config.cutoffs;
  report.per_query.resize(records.size());
  const auto depth = config.max_cutoff();
  parallel_for(records.size(), workers, [&](std::size_t i) {
    const auto& rec = records[i];
    const auto relevant = retriever.corpus().relevant_ids(rec);
    const auto ranked = retriever.retrieve(texts[i], depth, rec.query_id);
    const auto ids = ranked.doc_ids();
    QueryEval q{rec.query_id, rec.subset, {}};
    for (auto c : config.cutoffs) q.ndcg.push_back(ndcg_at_k(std::span<const std::string>(ids), relevant, c));
    report.per_query[i] = std::move(q);
  });
  return report;
}

}  // namespace toolbridge
