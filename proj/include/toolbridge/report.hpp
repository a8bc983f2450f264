#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/metrics.hpp"

namespace toolbridge {

/// A relative-change row: `label` compares run `current` against run `baseline`.
struct DeltaSpec {
  std::string label;
  std::string current;
  std::string baseline;
};

/// Several evaluated runs of one retriever plus the delta rows between them.
struct ComparisonReport {
  std::string kind;        // degradation | trb | ablation | eval
  std::string retriever;   // method column
  std::string layout = "table3";  // table3 | table4
  std::vector<std::size_t> cutoffs{5, 10};
  std::vector<EvalReport> runs;
  std::vector<DeltaSpec> deltas;
  OrderedJson extra = OrderedJson::object();

  const EvalReport& run(const std::string& label) const {
    for (const auto& r : runs) {
      if (r.label == label) return r;
    }
    throw Error(ErrorKind::not_found, "report has no run '" + label + "'");
  }
};

namespace detail {

inline std::string cutoff_key(std::size_t k) { return "ndcg@" + std::to_string(k); }

inline OrderedJson opt_number(const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); }

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

inline OrderedJson report_json(const ComparisonReport& report) {
  OrderedJson j;
  j["kind"] = report.kind;
  j["retriever"] = report.retriever;
  j["layout"] = report.layout;
  j["cutoffs"] = report.cutoffs;
  auto runs = OrderedJson::array();
  for (const auto& run : report.runs) {
    OrderedJson r;
    r["label"] = run.label;
    r["queries"] = run.per_query.size();
    OrderedJson subsets = OrderedJson::object();
    for (const auto& s : run.summaries()) {
      OrderedJson row;
      row["count"] = s.count;
      for (std::size_t c = 0; c < report.cutoffs.size(); ++c) row[detail::cutoff_key(report.cutoffs[c])] = s.mean[c];
      row["avg"] = s.avg;
      subsets[s.name] = std::move(row);
    }
    r["subsets"] = std::move(subsets);
    runs.push_back(std::move(r));
  }
  j["runs"] = std::move(runs);
  auto deltas = OrderedJson::array();
  for (const auto& spec : report.deltas) {
    OrderedJson d;
    d["label"] = spec.label;
    d["current"] = spec.current;
    d["baseline"] = spec.baseline;
    OrderedJson subsets = OrderedJson::object();
    for (const auto& s : compare_reports(report.run(spec.current), report.run(spec.baseline))) {
      OrderedJson row;
      for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
        row[detail::cutoff_key(report.cutoffs[c])] = detail::opt_number(s.delta[c]);
      }
      row["avg"] = detail::opt_number(s.avg);
      subsets[s.name] = std::move(row);
    }
    d["subsets_pct"] = std::move(subsets);
    deltas.push_back(std::move(d));
  }
  j["deltas"] = std::move(deltas);
  j["extra"] = report.extra;
  return j;
}

/// Markdown tables. Scores are printed x100 with two decimals; delta rows
/// are percentages. `table3` prints NDCG@k columns plus Avg. per subset;
/// `table4` prints only the N@k columns.
inline std::string report_markdown(const ComparisonReport& report) {
  std::vector<std::string> subsets;
  for (const auto& run : report.runs) {
    for (const auto& s : run.summaries()) {
      if (std::find(subsets.begin(), subsets.end(), s.name) == subsets.end()) subsets.push_back(s.name);
    }
  }
  // "all" last.
  std::stable_partition(subsets.begin(), subsets.end(), [](const std::string& s) { return s != "all"; });
  const bool with_avg = report.layout != "table4";
  std::string out = "# " + report.kind + " report (" + report.retriever + ")\n\n";
  std::string header = with_avg ? "| Method | Dataset |" : "| Method |";
  std::string rule = with_avg ? "|---|---|" : "|---|";
  for (const auto& s : subsets) {
    for (auto k : report.cutoffs) {
      header += " " + s + (with_avg ? " NDCG@" : " N@") + std::to_string(k) + " |";
      rule += "---:|";
    }
    if (with_avg) {
      header += " " + s + " Avg. |";
      rule += "---:|";
    }
  }
  out += header + "\n" + rule + "\n";
  auto find_summary = [](const std::vector<SubsetSummary>& all, const std::string& name) -> const SubsetSummary* {
    for (const auto& s : all) {
      if (s.name == name) return &s;
    }
    return nullptr;
  };
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const auto& run = report.runs[r];
    const auto sums = run.summaries();
    std::string row = with_avg ? "| " + (r == 0 ? report.retriever : std::string()) + " | " + run.label + " |"
                               : "| " + run.label + " |";
    for (const auto& name : subsets) {
      const auto* s = find_summary(sums, name);
      for (std::size_t c = 0; c < report.cutoffs.size(); ++c) row += " " + (s ? detail::fmt2(100.0 * s->mean[c]) : "-") + " |";
      if (with_avg) row += " " + (s ? detail::fmt2(100.0 * s->avg) : "-") + " |";
    }
    out += row + "\n";
  }
  for (const auto& spec : report.deltas) {
    const auto deltas = compare_reports(report.run(spec.current), report.run(spec.baseline));
    std::string row = with_avg ? "| | " + spec.label + " |" : "| " + spec.label + " |";
    for (const auto& name : subsets) {
      const DeltaSummary* d = nullptr;
      for (const auto& x : deltas) {
        if (x.name == name) d = &x;
      }
      for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
        row += " " + ((d && d->delta[c]) ? detail::fmt2(*d->delta[c]) : std::string("n/a")) + " |";
      }
      if (with_avg) row += " " + ((d && d->avg) ? detail::fmt2(*d->avg) : std::string("n/a")) + " |";
    }
    out += row + "\n";
  }
  return out;
}

/// One line per (run, query): {run, query_id, subset, ndcg: {"5": x, ...}}.
inline std::string per_query_jsonl(const ComparisonReport& report) {
  std::string out;
  for (const auto& run : report.runs) {
    for (const auto& q : run.per_query) {
      OrderedJson row;
      row["run"] = run.label;
      row["query_id"] = q.query_id;
      row["subset"] = std::string(to_string(q.subset));
      OrderedJson ndcg = OrderedJson::object();
      for (std::size_t c = 0; c < run.cutoffs.size(); ++c) ndcg[std::to_string(run.cutoffs[c])] = q.ndcg[c];
      row["ndcg"] = std::move(ndcg);
      out += row.dump() + "\n";
    }
  }
  return out;
}

/// Rebuilds a report from a persisted report.json (metadata) and
/// per_query.jsonl (numbers). Every aggregate is recomputed.
inline ComparisonReport rebuild_report(const std::filesystem::path& report_json_path,
                                       const std::filesystem::path& per_query_path) {
  ComparisonReport report;
  Json meta;
  try {
    meta = Json::parse(read_text_file(report_json_path));
    report.kind = meta.at("kind").get<std::string>();
    report.retriever = meta.at("retriever").get<std::string>();
    report.layout = meta.value("layout", "table3");
    report.cutoffs = meta.at("cutoffs").get<std::vector<std::size_t>>();
    for (const auto& r : meta.at("runs")) {
      EvalReport run;
      run.label = r.at("label").get<std::string>();
      run.cutoffs = report.cutoffs;
      report.runs.push_back(std::move(run));
    }
    for (const auto& d : meta.at("deltas")) {
      report.deltas.push_back({d.at("label").get<std::string>(), d.at("current").get<std::string>(),
                               d.at("baseline").get<std::string>()});
    }
    report.extra = OrderedJson::parse(meta.at("extra").dump());
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, report_json_path.string() + ": malformed report: " + e.what());
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < report.runs.size(); ++i) index[report.runs[i].label] = i;
  for_each_jsonl(per_query_path, [&](const Json& row, std::size_t line) {
    try {
      const auto label = row.at("run").get<std::string>();
      auto it = index.find(label);
      if (it == index.end()) throw LineError(ErrorKind::parse, per_query_path.string(), line, "unknown run '" + label + "'");
      QueryEval q;
      q.query_id = row.at("query_id").get<std::string>();
      q.subset = parse_subset(row.at("subset").get<std::string>()).value_or(SubsetTag::other);
      for (auto k : report.cutoffs) q.ndcg.push_back(row.at("ndcg").at(std::to_string(k)).get<double>());
      report.runs[it->second].per_query.push_back(std::move(q));
    } catch (const Json::exception& e) {
      throw LineError(ErrorKind::parse, per_query_path.string(), line, e.what());
    }
  });
  return report;
}

/// Exclusive claim on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".toolbridge.lock") {
    std::filesystem::create_directories(dir);
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error(ErrorKind::io, "output directory " + dir.string() + " is locked by another run");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Writes report.json, report.md, per_query.jsonl and run_config.json.
inline void write_report_files(const std::filesystem::path& dir, const ComparisonReport& report,
                               const OrderedJson& resolved_config) {
  write_file_atomic(dir / "report.json", report_json(report).dump(2) + "\n");
  write_file_atomic(dir / "report.md", report_markdown(report));
  write_file_atomic(dir / "per_query.jsonl", per_query_jsonl(report));
  write_file_atomic(dir / "run_config.json", resolved_config.dump(2) + "\n");
}

}  // namespace toolbridge
