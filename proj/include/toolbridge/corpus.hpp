#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/textproc.hpp"

namespace toolbridge {

/// One retrievable tool/API document.
struct ToolDoc {
  std::string doc_id;
  std::string tool_name;
  std::string api_name;
  std::string description;
  std::optional<std::string> category;

  bool operator==(const ToolDoc&) const = default;
};

/// Ground-truth reference to a tool API.
struct ApiRef {
  std::string tool_name;
  std::string api_name;

  auto operator<=>(const ApiRef&) const = default;
  bool operator==(const ApiRef&) const = default;
};

inline std::string to_string(const ApiRef& ref) { return ref.tool_name + "::" + ref.api_name; }

enum class SubsetTag { I1, I2, I3, other };

inline std::string_view to_string(SubsetTag tag) {
  switch (tag) {
    case SubsetTag::I1: return "I1";
    case SubsetTag::I2: return "I2";
    case SubsetTag::I3: return "I3";
    case SubsetTag::other: return "other";
  }
  return "other";
}

inline std::optional<SubsetTag> parse_subset(std::string_view s) {
  if (s == "I1") return SubsetTag::I1;
  if (s == "I2") return SubsetTag::I2;
  if (s == "I3") return SubsetTag::I3;
  if (s == "other") return SubsetTag::other;
  return std::nullopt;
}

/// One benchmark item: vague instruction, optional specific instruction and
/// the ground-truth API set.
struct QueryRecord {
  std::string query_id;
  std::string vague;
  std::optional<std::string> specific;
  std::vector<ApiRef> ground_truth;  // unique, in file order
  SubsetTag subset = SubsetTag::other;

  bool operator==(const QueryRecord&) const = default;
};

/// Rendered text a retriever indexes for a document.
inline std::string doc_text(const ToolDoc& doc) {
  std::string out = doc.tool_name;
  for (const std::string* part : {&doc.api_name, &doc.description}) {
    if (part->empty()) continue;
    if (!out.empty()) out += ' ';
    out += *part;
  }
  return out;
}

struct CorpusStats {
  std::size_t doc_count = 0;
  double avg_doc_tokens = 0.0;
};

/// Validated, immutable tool collection.
class Corpus {
 public:
  Corpus() = default;

  /// Validates uniqueness of doc_id and (tool_name, api_name). `lines`, when
  /// given, maps each doc to its source line for error messages.
  static Corpus from_docs(std::vector<ToolDoc> docs, const std::string& source = "<memory>",
                          const std::vector<std::size_t>& lines = {}) {
    if (docs.empty()) throw Error(ErrorKind::empty_corpus, source + ": corpus has no documents");
    Corpus c;
    auto line_of = [&](std::size_t i) { return lines.empty() ? i + 1 : lines[i]; };
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto& d = docs[i];
      if (d.tool_name.empty() || d.api_name.empty()) {
        throw LineError(ErrorKind::parse, source, line_of(i), "tool_name and api_name must be non-empty");
      }
      if (d.doc_id.empty()) throw LineError(ErrorKind::parse, source, line_of(i), "doc_id must be non-empty");
      if (!c.by_id_.emplace(d.doc_id, i).second) {
        throw LineError(ErrorKind::duplicate_key, source, line_of(i), "duplicate doc_id '" + d.doc_id + "'");
      }
      ApiRef ref{d.tool_name, d.api_name};
      if (!c.by_ref_.emplace(ref, i).second) {
        throw LineError(ErrorKind::duplicate_key, source, line_of(i),
                        "duplicate (tool_name, api_name) '" + to_string(ref) + "'");
      }
    }
    c.docs_ = std::move(docs);
    std::size_t total = 0;
    for (const auto& d : c.docs_) total += tokenize(doc_text(d)).size();
    c.stats_.doc_count = c.docs_.size();
    c.stats_.avg_doc_tokens = static_cast<double>(total) / static_cast<double>(c.docs_.size());
    return c;
  }

  const std::vector<ToolDoc>& docs() const noexcept { return docs_; }
  std::size_t size() const noexcept { return docs_.size(); }
  const CorpusStats& stats() const noexcept { return stats_; }
  const ToolDoc& operator[](std::size_t i) const { return docs_[i]; }

  std::optional<std::size_t> find_id(std::string_view doc_id) const {
    auto it = by_id_.find(std::string(doc_id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find_ref(const ApiRef& ref) const {
    auto it = by_ref_.find(ref);
    if (it == by_ref_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view doc_id) const {
    auto idx = find_id(doc_id);
    if (!idx) throw Error(ErrorKind::not_found, "unknown doc_id '" + std::string(doc_id) + "'");
    return *idx;
  }

  /// doc_ids of a query's ground truth; the record must already be validated.
  std::set<std::string> relevant_ids(const QueryRecord& record) const {
    std::set<std::string> ids;
    for (const auto& ref : record.ground_truth) {
      auto idx = find_ref(ref);
      if (!idx) {
        throw Error(ErrorKind::unresolved_reference,
                    "query '" + record.query_id + "' references unknown api " + to_string(ref));
      }
      ids.insert(docs_[*idx].doc_id);
    }
    return ids;
  }

 private:
  std::vector<ToolDoc> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<ApiRef, std::size_t> by_ref_;
  CorpusStats stats_;
};

namespace detail {

inline std::string require_string(const Json& obj, const char* key, const std::string& path, std::size_t line,
                                  bool allow_empty = false) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw LineError(ErrorKind::parse, path, line, std::string("missing string field '") + key + "'");
  }
  auto value = it->get<std::string>();
  if (!allow_empty && value.empty()) {
    throw LineError(ErrorKind::parse, path, line, std::string("field '") + key + "' must be non-empty");
  }
  return value;
}

inline std::optional<std::string> optional_string(const Json& obj, const char* key, const std::string& path,
                                                  std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw LineError(ErrorKind::parse, path, line, std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

}  // namespace detail

inline ToolDoc tool_doc_from_json(const Json& obj, const std::string& path, std::size_t line) {
  ToolDoc d;
  d.tool_name = detail::require_string(obj, "tool_name", path, line);
  d.api_name = detail::require_string(obj, "api_name", path, line);
  d.description = detail::optional_string(obj, "description", path, line).value_or("");
  d.category = detail::optional_string(obj, "category", path, line);
  d.doc_id = detail::optional_string(obj, "doc_id", path, line).value_or(d.tool_name + "::" + d.api_name);
  return d;
}

inline OrderedJson to_json(const ToolDoc& d) {
  OrderedJson j;
  j["doc_id"] = d.doc_id;
  j["tool_name"] = d.tool_name;
  j["api_name"] = d.api_name;
  j["description"] = d.description;
  if (d.category) j["category"] = *d.category;
  return j;
}

inline OrderedJson to_json(const QueryRecord& q) {
  OrderedJson j;
  j["query_id"] = q.query_id;
  j["vague"] = q.vague;
  if (q.specific) j["specific"] = *q.specific;
  auto apis = OrderedJson::array();
  for (const auto& ref : q.ground_truth) {
    apis.push_back(OrderedJson{{"tool_name", ref.tool_name}, {"api_name", ref.api_name}});
  }
  j["relevant_apis"] = std::move(apis);
  j["subset"] = std::string(to_string(q.subset));
  return j;
}

/// Reads `tools.jsonl`.
inline Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<ToolDoc> docs;
  std::vector<std::size_t> lines;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    docs.push_back(tool_doc_from_json(obj, path.string(), line));
    lines.push_back(line);
  });
  return Corpus::from_docs(std::move(docs), path.string(), lines);
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::vector<OrderedJson> rows;
  for (const auto& d : corpus.docs()) rows.push_back(to_json(d));
  write_file_atomic(path, to_jsonl(rows));
}

inline QueryRecord query_from_json(const Json& obj, const std::string& path, std::size_t line) {
  QueryRecord q;
  q.query_id = detail::require_string(obj, "query_id", path, line);
  q.vague = detail::require_string(obj, "vague", path, line);
  q.specific = detail::optional_string(obj, "specific", path, line);
  if (auto subset = detail::optional_string(obj, "subset", path, line)) {
    auto tag = parse_subset(*subset);
    if (!tag) throw LineError(ErrorKind::parse, path, line, "subset must be one of I1/I2/I3/other");
    q.subset = *tag;
  }
  auto it = obj.find("relevant_apis");
  if (it == obj.end() || !it->is_array()) {
    throw LineError(ErrorKind::parse, path, line, "missing array field 'relevant_apis'");
  }
  std::set<ApiRef> seen;
  for (const auto& item : *it) {
    if (!item.is_object()) throw LineError(ErrorKind::parse, path, line, "relevant_apis entries must be objects");
    ApiRef ref{detail::require_string(item, "tool_name", path, line),
               detail::require_string(item, "api_name", path, line)};
    if (seen.insert(ref).second) q.ground_truth.push_back(std::move(ref));
  }
  return q;
}

/// Checks one record against the corpus; returns the list of problems.
inline std::vector<std::string> validate_query(const QueryRecord& q, const Corpus& corpus) {
  std::vector<std::string> problems;
  if (q.vague.empty()) problems.push_back("vague instruction is empty");
  if (q.ground_truth.empty()) problems.push_back("ground truth is empty");
  for (const auto& ref : q.ground_truth) {
    if (!corpus.find_ref(ref)) problems.push_back("unresolved api " + to_string(ref));
  }
  return problems;
}

/// Reads `queries.jsonl` and validates every record against the corpus.
inline std::vector<QueryRecord> load_queries(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<QueryRecord> records;
  std::set<std::string> ids;
  std::string unresolved;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    auto q = query_from_json(obj, path.string(), line);
    if (!ids.insert(q.query_id).second) {
      throw LineError(ErrorKind::duplicate_key, path.string(), line, "duplicate query_id '" + q.query_id + "'");
    }
    if (q.ground_truth.empty()) {
      throw LineError(ErrorKind::parse, path.string(), line, "query '" + q.query_id + "' has empty ground truth");
    }
    for (const auto& ref : q.ground_truth) {
      if (!corpus.find_ref(ref)) {
        if (!unresolved.empty()) unresolved += "; ";
        unresolved += q.query_id + " -> " + to_string(ref);
      }
    }
    records.push_back(std::move(q));
  });
  if (!unresolved.empty()) {
    throw Error(ErrorKind::unresolved_reference, path.string() + ": unresolved ground truth: " + unresolved);
  }
  return records;
}

inline void save_queries(const std::vector<QueryRecord>& records, const std::filesystem::path& path) {
  std::vector<OrderedJson> rows;
  for (const auto& q : records) rows.push_back(to_json(q));
  write_file_atomic(path, to_jsonl(rows));
}

/// Result of converting native ToolBench query files.
struct ConvertedData {
  std::vector<ToolDoc> docs;
  std::vector<QueryRecord> queries;
  std::size_t queries_without_vague = 0;
};

/// Converts a ToolBench query file (a JSON array of objects carrying
/// `api_list`, `query`, `query_id` and `relevant APIs`) into native records.
/// Tools are collected from every `api_list`. A vague rewrite is taken from
/// `vague_query` / `fuzzy_query` / `vague` when present; otherwise the
/// original instruction doubles as the vague text and is counted.
inline ConvertedData convert_toolbench(const std::vector<std::filesystem::path>& inputs,
                                       std::optional<SubsetTag> subset) {
  ConvertedData out;
  std::map<ApiRef, std::size_t> seen_docs;
  std::set<std::string> seen_queries;
  for (const auto& path : inputs) {
    Json root;
    try {
      root = Json::parse(read_text_file(path));
    } catch (const Json::parse_error& e) {
      throw Error(ErrorKind::parse, path.string() + ": invalid JSON: " + e.what());
    }
    if (!root.is_array()) throw Error(ErrorKind::parse, path.string() + ": expected a top-level array");
    for (std::size_t i = 0; i < root.size(); ++i) {
      const auto& item = root[i];
      const std::string where = path.string() + "[" + std::to_string(i) + "]";
      if (!item.is_object()) throw Error(ErrorKind::parse, where + ": expected an object");
      if (auto apis = item.find("api_list"); apis != item.end() && apis->is_array()) {
        for (const auto& api : *apis) {
          ToolDoc d;
          d.tool_name = api.value("tool_name", "");
          d.api_name = api.value("api_name", "");
          if (d.tool_name.empty() || d.api_name.empty()) continue;
          d.description = api.value("api_description", "");
          if (auto cat = api.find("category_name"); cat != api.end() && cat->is_string()) d.category = *cat;
          d.doc_id = d.tool_name + "::" + d.api_name;
          ApiRef ref{d.tool_name, d.api_name};
          if (seen_docs.emplace(ref, out.docs.size()).second) out.docs.push_back(std::move(d));
        }
      }
      QueryRecord q;
      const auto& qid = item.contains("query_id") ? item["query_id"] : Json(i);
      q.query_id = qid.is_string() ? qid.get<std::string>() : qid.dump();
      if (!seen_queries.insert(q.query_id).second) {
        throw Error(ErrorKind::duplicate_key, where + ": duplicate query_id '" + q.query_id + "'");
      }
      q.specific = item.value("query", "");
      for (const char* key : {"vague_query", "fuzzy_query", "vague"}) {
        if (auto v = item.find(key); v != item.end() && v->is_string() && !v->get<std::string>().empty()) {
          q.vague = *v;
          break;
        }
      }
      if (q.vague.empty()) {
        q.vague = *q.specific;
        ++out.queries_without_vague;
      }
      if (auto rel = item.find("relevant APIs"); rel != item.end() && rel->is_array()) {
        std::set<ApiRef> refs;
        for (const auto& pair : *rel) {
          ApiRef ref;
          if (pair.is_array() && pair.size() == 2) {
            ref = {pair[0].get<std::string>(), pair[1].get<std::string>()};
          } else if (pair.is_object()) {
            ref = {pair.value("tool_name", ""), pair.value("api_name", "")};
          } else {
            throw Error(ErrorKind::parse, where + ": malformed 'relevant APIs' entry");
          }
          if (refs.insert(ref).second) q.ground_truth.push_back(std::move(ref));
        }
      }
      q.subset = subset.value_or(SubsetTag::other);
      out.queries.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace toolbridge
