#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "toolbridge/corpus.hpp"
#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/parallel.hpp"

namespace toolbridge {

// ---------------------------------------------------------------------------
// Prompt assets

/// Prompt used to derive a vague instruction from a specific one and its
/// relevant APIs.
inline constexpr std::string_view kVagueGenerationTemplate =
    "Given a user instruction and a list of related APIs, your task is to generate a fuzzier version of the user "
    "instruction by simplifying or replacing technical terms with synonyms, without changing the user's core "
    "requirements. You can follow these steps:\n"
    "- Analyze the user instruction: identify how many tasks the user has and what the specific needs are.\n"
    "- Compare with the API list: match the user's tasks with the relevant APIs. Remove any references to specific "
    "APIs or redundant technical details.\n"
    "- Simplify technical terms: replace highly specialized or technical terms with more common, everyday language. "
    "The goal is to make the instruction sound like something a regular user would say in casual conversation.\n"
    "- Rephrase the instruction: use simpler language or synonyms where appropriate, but ensure the core intent "
    "remains unchanged.\n"
    "- Output the result: provide the final fuzzier version of the instruction.\n"
    "\n"
    "Example1:\n"
    "Original instruction: I'm organizing a gaming tournament for my company's employees. Could you provide the "
    "statistics and ratings of highly skilled players in popular games like Dota 2 and World of Tanks? Also, "
    "recommend some gaming peripherals and accessories for the event.\n"
    "Relevant APIs: [tool_name: World of Tanks Stats, api_name: Get Stats], [tool_name: DOTA 2 Steam Web, api_name: "
    "Match History], [tool_name: DOTA 2 Steam Web, api_name: Match Details], [tool_name: CheapShark - Game Deals, "
    "api_name: List of Deals], [tool_name: CheapShark - Game Deals, api_name: Game Lookup]\n"
    "Answer: I'm organizing a company gaming tournament and need player stats for top players in popular games. Can "
    "you also recommend some good gaming gear for the event?\n"
    "\n"
    "Example2:\n"
    "Original instruction: I want to surprise my family with a personalized playlist. Can you recommend some "
    "popular tracks from different genres? Additionally, provide me with the detailed information of a playlist "
    "that I want to create. Also, fetch the track URL of a specific song that I want to include in the playlist.\n"
    "Relevant APIs: [tool_name: Shazam, api_name: artists/get-summary], [tool_name: Deezer, api_name: Track], "
    "[tool_name: Soundcloud, api_name: /playlist/info]\n"
    "Answer: I want to make a special playlist for my family. Can you suggest some hit songs from different music "
    "styles? Also, give me more info about the playlist I'm putting together. Finally, can you get me the link to a "
    "specific track I want to add?\n"
    "\n"
    "Now, please make the fuzzier instruction.\n"
    "Original instruction: {instruction}\n"
    "Relevant APIs: [{APIs}]\n"
    "Answer:";

/// Forward direction used at rewrite time: vague in, retriever-friendly out.
inline constexpr std::string_view kEnhanceTemplate =
    "You rewrite short, casual user requests for a tool retrieval system. Expand the request below into one "
    "detailed instruction that names the kinds of tools, APIs and parameters the user most likely needs. Keep the "
    "user's intent unchanged and reply with the rewritten instruction only.\n"
    "\n"
    "Request: {instruction}\n"
    "Detailed instruction:";

/// A prompt template with an `{instruction}` placeholder and an optional
/// `{APIs}` placeholder.
class RewritePrompt {
 public:
  RewritePrompt(std::string template_id, std::string template_text)
      : id_(std::move(template_id)), text_(std::move(template_text)) {
    std::size_t count = 0;
    for (auto pos = text_.find("{instruction}"); pos != std::string::npos; pos = text_.find("{instruction}", pos + 1)) {
      ++count;
    }
    if (count != 1) {
      throw Error(ErrorKind::invalid_argument,
                  "template '" + id_ + "' must contain {instruction} exactly once (found " + std::to_string(count) + ")");
    }
  }

  static RewritePrompt enhance() { return {"enhance", std::string(kEnhanceTemplate)}; }
  static RewritePrompt vague_generation() { return {"vague_generation", std::string(kVagueGenerationTemplate)}; }

  /// Built-in template by id.
  static RewritePrompt builtin(std::string_view id) {
    if (id == "enhance") return enhance();
    if (id == "vague_generation") return vague_generation();
    throw Error(ErrorKind::invalid_argument, "unknown template '" + std::string(id) + "'");
  }

  const std::string& id() const noexcept { return id_; }
  const std::string& text() const noexcept { return text_; }

  /// Substitutes placeholders in one pass; inserted text is never rescanned.
  std::string render(std::string_view instruction, std::string_view apis = {}) const {
    std::string out;
    out.reserve(text_.size() + instruction.size() + apis.size());
    std::size_t i = 0;
    while (i < text_.size()) {
      if (text_.compare(i, 13, "{instruction}") == 0) {
        out += instruction;
        i += 13;
      } else if (text_.compare(i, 6, "{APIs}") == 0) {
        out += apis;
        i += 6;
      } else {
        out += text_[i++];
      }
    }
    return out;
  }

 private:
  std::string id_;
  std::string text_;
};

/// `tool_name: A, api_name: B], [tool_name: C, api_name: D` so that the
/// template's surrounding brackets close the list.
inline std::string format_api_list(const QueryRecord& record) {
  std::string out;
  for (std::size_t i = 0; i < record.ground_truth.size(); ++i) {
    if (i) out += "], [";
    out += "tool_name: " + record.ground_truth[i].tool_name + ", api_name: " + record.ground_truth[i].api_name;
  }
  return out;
}

/// Renders a prompt for one record. Templates that derive vague text take
/// the specific instruction; rewriting templates take the vague one.
inline std::string render_for(const RewritePrompt& prompt, const QueryRecord& record) {
  if (prompt.id() == "vague_generation") {
    if (!record.specific) {
      throw Error(ErrorKind::invalid_argument, "query '" + record.query_id + "' has no specific instruction");
    }
    return prompt.render(*record.specific, format_api_list(record));
  }
  return prompt.render(record.vague, format_api_list(record));
}

// ---------------------------------------------------------------------------
// Candidates and backends

struct CandidateRewrite {
  std::string query_id;
  std::size_t candidate_index = 0;
  std::string text;
  std::optional<double> score;
  bool fallback = false;  // text replaced by the vague instruction
  std::string note;

  bool operator==(const CandidateRewrite&) const = default;
};

inline OrderedJson to_json(const CandidateRewrite& c) {
  OrderedJson j;
  j["query_id"] = c.query_id;
  j["candidate_index"] = c.candidate_index;
  j["text"] = c.text;
  j["score"] = c.score ? OrderedJson(*c.score) : OrderedJson(nullptr);
  j["fallback"] = c.fallback;
  if (!c.note.empty()) j["note"] = c.note;
  return j;
}

inline CandidateRewrite candidate_from_json(const Json& j) {
  CandidateRewrite c;
  c.query_id = j.at("query_id").get<std::string>();
  c.candidate_index = j.at("candidate_index").get<std::size_t>();
  c.text = j.at("text").get<std::string>();
  if (j.contains("score") && !j["score"].is_null()) c.score = j["score"].get<double>();
  c.fallback = j.value("fallback", false);
  c.note = j.value("note", "");
  return c;
}

/// Text-generation policy behind the rewriter. Implementations must be safe
/// to call from several threads.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// Up to n generations for the record. Throws Error(backend) on failure.
  virtual std::vector<std::string> generate(const QueryRecord& record, const RewritePrompt& prompt,
                                            std::size_t n) const = 0;
};

/// Deterministic stand-in: candidate j appends the tool names of the first
/// min(j, |ground truth|) ground-truth APIs to the vague text.
inline std::string mock_rewrite(const QueryRecord& record, std::size_t j) {
  std::string text = record.vague;
  const std::size_t take = std::min(j, record.ground_truth.size());
  for (std::size_t i = 0; i < take; ++i) text += " " + record.ground_truth[i].tool_name;
  return text;
}

class MockBackend final : public Backend {
 public:
  enum class Mode {
    graded,  // candidate j = mock_rewrite(record, j + 1)
    oracle,  // every candidate names all ground-truth tools
  };

  explicit MockBackend(Mode mode = Mode::graded) : mode_(mode) {}

  std::string name() const override { return mode_ == Mode::graded ? "mock" : "mock-oracle"; }

  std::vector<std::string> generate(const QueryRecord& record, const RewritePrompt&, std::size_t n) const override {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < n; ++j) {
      out.push_back(mock_rewrite(record, mode_ == Mode::graded ? j + 1 : record.ground_truth.size()));
    }
    return out;
  }

 private:
  Mode mode_;
};

/// Returns the vague instruction unchanged.
class IdentityBackend final : public Backend {
 public:
  std::string name() const override { return "identity"; }
  std::vector<std::string> generate(const QueryRecord& record, const RewritePrompt&, std::size_t n) const override {
    return std::vector<std::string>(n, record.vague);
  }
};

struct SampleResult {
  std::vector<CandidateRewrite> candidates;
  bool failed = false;  // the backend raised; every candidate fell back
  std::string error;
  std::size_t replaced = 0;  // candidates that fell back to the vague text
};

/// Exactly n candidates, in backend order. Empty or missing generations are
/// replaced by the vague text and flagged; a backend failure flags them all.
inline SampleResult sample_candidates(const Backend& backend, const RewritePrompt& prompt, const QueryRecord& record,
                                      std::size_t n) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "n must be at least 1");
  SampleResult result;
  std::vector<std::string> texts;
  try {
    texts = backend.generate(record, prompt, n);
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  for (std::size_t j = 0; j < n; ++j) {
    CandidateRewrite c{record.query_id, j, {}, std::nullopt, false, {}};
    const bool usable = j < texts.size() && texts[j].find_first_not_of(" \t\r\n") != std::string::npos;
    if (usable) {
      c.text = texts[j];
    } else {
      c.text = record.vague;
      c.fallback = true;
      c.note = result.failed ? "backend failure: " + result.error
                             : (j < texts.size() ? "empty generation" : "backend returned fewer candidates");
      ++result.replaced;
    }
    result.candidates.push_back(std::move(c));
  }
  return result;
}

inline std::vector<SampleResult> sample_batch(const Backend& backend, const RewritePrompt& prompt,
                                              const std::vector<QueryRecord>& records, std::size_t n,
                                              std::size_t workers) {
  std::vector<SampleResult> out(records.size());
  parallel_for(records.size(), workers,
               [&](std::size_t i) { out[i] = sample_candidates(backend, prompt, records[i], n); });
  return out;
}

// ---------------------------------------------------------------------------
// Response cache

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// One JSON file per request key under a directory. Entries store their key
/// and are ignored if the key does not match (hash collision).
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static OrderedJson make_key(std::string_view template_text, std::string_view query, std::string_view model,
                              double temperature, std::size_t index) {
    OrderedJson key;
    key["template"] = template_text;
    key["query"] = query;
    key["model"] = model;
    key["temperature"] = temperature;
    key["index"] = index;
    return key;
  }

  std::filesystem::path path_for(const OrderedJson& key) const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(key.dump())));
    return dir_ / (std::string(buf) + ".json");
  }

  std::optional<std::string> get(const OrderedJson& key) const {
    const auto path = path_for(key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
      ++misses_;
      return std::nullopt;
    }
    try {
      auto j = OrderedJson::parse(read_text_file(path));
      if (j.at("key") == key) {
        ++hits_;
        return j.at("text").get<std::string>();
      }
    } catch (const std::exception&) {
    }
    ++misses_;
    return std::nullopt;
  }

  void put(const OrderedJson& key, std::string_view text) const {
    OrderedJson j;
    j["key"] = key;
    j["text"] = text;
    write_file_atomic(path_for(key), j.dump());
  }

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

/// Settings for the HTTP text-generation backend.
struct BackendConfig {
  enum class Kind { http_endpoint, mock };
  enum class ApiStyle { native, openai_chat };

  Kind kind = Kind::mock;
  std::string endpoint;  // full URL, e.g. http://localhost:8000/generate
  std::string model = "bridge";
  double temperature = 0.8;
  double timeout_seconds = 60.0;
  std::size_t max_retries = 3;
  std::filesystem::path cache_dir;  // empty: no cache
  ApiStyle api_style = ApiStyle::native;
  std::uint64_t seed = 0;
  std::size_t max_concurrency = 4;
  std::string api_key;

  void validate() const {
    if (!(timeout_seconds > 0.0)) throw ConfigError("/http/timeout_s", "timeout must be > 0");
    if (kind == Kind::http_endpoint && endpoint.empty()) throw ConfigError("/http/endpoint", "endpoint is required");
    if (max_concurrency == 0) throw ConfigError("/http/max_concurrency", "must be >= 1");
  }
};

}  // namespace toolbridge
