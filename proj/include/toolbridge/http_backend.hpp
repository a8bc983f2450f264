#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/retrieval.hpp"
#include "toolbridge/rewriter.hpp"

namespace toolbridge {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::invalid_argument, "endpoint '" + url + "' has no scheme");
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorKind::invalid_argument, "endpoint scheme must be http or https");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Applies TOOLBRIDGE_ENDPOINT and TOOLBRIDGE_API_KEY when set.
inline void apply_environment(BackendConfig& config) {
  if (const char* ep = std::getenv("TOOLBRIDGE_ENDPOINT"); ep && *ep) config.endpoint = ep;
  if (const char* key = std::getenv("TOOLBRIDGE_API_KEY"); key && *key) config.api_key = key;
}

namespace detail {

// Sends one JSON POST with retries on transport errors, 429 and 5xx.
inline Json post_json(const BackendConfig& config, const Json& body, std::atomic<std::size_t>& request_count) {
  const auto url = parse_url(config.endpoint);
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto backoff = std::min<std::size_t>(50u << std::min<std::size_t>(attempt - 1, 5), 1000);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    }
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);
    ++request_count;
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorKind::backend, "HTTP " + std::to_string(res->status) + " from " + config.endpoint);
    }
    try {
      return Json::parse(res->body);
    } catch (const Json::parse_error&) {
      throw Error(ErrorKind::backend, "endpoint returned invalid JSON");
    }
  }
  throw Error(ErrorKind::backend, "endpoint failed after " + std::to_string(config.max_retries + 1) +
                                      " attempts: " + last_error);
}

}  // namespace detail

/// Text generation over HTTP. One request per candidate index, each with its
/// own seed (config.seed + index), so every candidate is cached separately.
///
/// Native wire format:
///   request  {"model", "prompt", "temperature", "n", "seed"}
///   response {"candidates": [string, ...]}
/// OpenAI chat-completions mapping:
///   request  {"model", "messages": [{"role": "user", "content": prompt}],
///             "temperature", "n", "seed"}
///   response choices[i].message.content -> candidates[i]
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config)
      : config_(std::move(config)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_concurrency))) {
    config_.kind = BackendConfig::Kind::http_endpoint;
    config_.validate();
    parse_url(config_.endpoint);
    if (!config_.cache_dir.empty()) cache_ = std::make_unique<ResponseCache>(config_.cache_dir);
  }

  std::string name() const override { return "http:" + config_.model; }

  std::vector<std::string> generate(const QueryRecord& record, const RewritePrompt& prompt,
                                    std::size_t n) const override {
    const auto rendered = render_for(prompt, record);
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto key = ResponseCache::make_key(prompt.text(), rendered, config_.model, config_.temperature, j);
      if (cache_) {
        if (auto hit = cache_->get(key)) {
          out.push_back(std::move(*hit));
          continue;
        }
      }
      auto text = request_one(rendered, config_.seed + j);
      // Empty generations are not cached so that a rerun retries them.
      if (cache_ && !text.empty()) cache_->put(key, text);
      out.push_back(std::move(text));
    }
    return out;
  }

  std::size_t requests_sent() const noexcept { return requests_; }
  const ResponseCache* cache() const noexcept { return cache_.get(); }

 private:
  std::string request_one(const std::string& prompt, std::uint64_t seed) const {
    Json body;
    body["model"] = config_.model;
    if (config_.api_style == BackendConfig::ApiStyle::openai_chat) {
      body["messages"] = Json::array({Json{{"role", "user"}, {"content", prompt}}});
    } else {
      body["prompt"] = prompt;
    }
    body["temperature"] = config_.temperature;
    body["n"] = 1;
    body["seed"] = seed;
    slots_.acquire();
    Json response;
    try {
      response = detail::post_json(config_, body, requests_);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    try {
      if (config_.api_style == BackendConfig::ApiStyle::openai_chat) {
        const auto& choices = response.at("choices");
        if (choices.empty()) return {};
        const auto& content = choices.at(0).at("message").at("content");
        return content.is_string() ? content.get<std::string>() : std::string{};
      }
      const auto& candidates = response.at("candidates");
      if (candidates.empty()) return {};
      return candidates.at(0).get<std::string>();
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::backend, std::string("unexpected response shape: ") + e.what());
    }
  }

  BackendConfig config_;
  std::unique_ptr<ResponseCache> cache_;
  mutable std::counting_semaphore<> slots_;
  mutable std::atomic<std::size_t> requests_{0};
};

/// Embedding client for OpenAI-compatible `/embeddings` endpoints:
/// request {"model", "input"}, response data[0].embedding.
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(BackendConfig config, std::size_t dimension) : config_(std::move(config)), dim_(dimension) {
    config_.kind = BackendConfig::Kind::http_endpoint;
    config_.validate();
    parse_url(config_.endpoint);
    if (dim_ == 0) dim_ = embed("dimension probe").size();
  }

  std::size_t dimension() const override { return dim_; }

  std::vector<float> embed(std::string_view text) const override {
    Json body{{"model", config_.model}, {"input", std::string(text)}};
    const auto response = detail::post_json(config_, body, requests_);
    try {
      auto vec = response.at("data").at(0).at("embedding").get<std::vector<float>>();
      if (dim_ != 0 && vec.size() != dim_) throw Error(ErrorKind::backend, "embedding dimension changed");
      return vec;
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::backend, std::string("unexpected embedding response: ") + e.what());
    }
  }

 private:
  BackendConfig config_;
  std::size_t dim_;
  mutable std::atomic<std::size_t> requests_{0};
};

}  // namespace toolbridge
