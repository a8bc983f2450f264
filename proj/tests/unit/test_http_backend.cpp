#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <thread>

#include "toolbridge/http_backend.hpp"

using namespace toolbridge;
namespace fs = std::filesystem;

namespace {

// Local server; `handler` decides the reply for each POST.
class TestServer {
 public:
  explicit TestServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post(".*", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  std::atomic<int> hits{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

QueryRecord record() {
  QueryRecord r;
  r.query_id = "q1";
  r.vague = "something about weather";
  r.ground_truth = {{"Skycast", "daily"}};
  return r;
}

BackendConfig config_for(const std::string& endpoint) {
  BackendConfig c;
  c.kind = BackendConfig::Kind::http_endpoint;
  c.endpoint = endpoint;
  c.timeout_seconds = 5;
  c.max_retries = 2;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "toolbridge_tests" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("parse_url splits origin and path", "[http]") {
  auto u = parse_url("http://localhost:8000/v1/generate");
  CHECK(u.origin == "http://localhost:8000");
  CHECK(u.path == "/v1/generate");
  CHECK(parse_url("https://example.org").path == "/");
  CHECK_THROWS_AS(parse_url("localhost:8000"), Error);
  CHECK_THROWS_AS(parse_url("ftp://x/y"), Error);
}

TEST_CASE("native format: one request per candidate with its own seed", "[http]") {
  std::vector<std::uint64_t> seeds;
  std::mutex mu;
  TestServer server([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = Json::parse(req.body);
    std::lock_guard lock(mu);
    seeds.push_back(body.at("seed").get<std::uint64_t>());
    CHECK(body.at("n") == 1);
    CHECK(body.at("prompt").get<std::string>().find("something about weather") != std::string::npos);
    res.set_content(Json{{"candidates", {"rewrite " + std::to_string(seeds.back())}}}.dump(), "application/json");
  });
  auto cfg = config_for(server.url("/generate"));
  cfg.seed = 10;
  HttpBackend backend(cfg);
  const auto out = backend.generate(record(), RewritePrompt::enhance(), 3);
  CHECK(out == std::vector<std::string>{"rewrite 10", "rewrite 11", "rewrite 12"});
  CHECK(backend.requests_sent() == 3);
}

TEST_CASE("openai chat mapping", "[http]") {
  TestServer server([](const httplib::Request& req, httplib::Response& res) {
    const auto body = Json::parse(req.body);
    CHECK(body.at("messages").at(0).at("role") == "user");
    CHECK(req.get_header_value("Authorization") == "Bearer secret");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"use Skycast"}}]})", "application/json");
  });
  auto cfg = config_for(server.url("/v1/chat/completions"));
  cfg.api_style = BackendConfig::ApiStyle::openai_chat;
  cfg.api_key = "secret";
  HttpBackend backend(cfg);
  CHECK(backend.generate(record(), RewritePrompt::enhance(), 1) == std::vector<std::string>{"use Skycast"});
}

TEST_CASE("retries 5xx and 429, then succeeds", "[http]") {
  std::atomic<int> calls{0};
  TestServer server([&](const httplib::Request&, httplib::Response& res) {
    const int c = calls++;
    if (c == 0) {
      res.status = 503;
    } else if (c == 1) {
      res.status = 429;
    } else {
      res.set_content(R"({"candidates":["ok"]})", "application/json");
    }
  });
  HttpBackend backend(config_for(server.url("/g")));
  CHECK(backend.generate(record(), RewritePrompt::enhance(), 1).front() == "ok");
  CHECK(server.hits == 3);
}

TEST_CASE("retry budget exhausted raises a backend error", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  HttpBackend backend(config_for(server.url("/g")));
  try {
    backend.generate(record(), RewritePrompt::enhance(), 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::backend);
  }
  CHECK(server.hits == 3);
}

TEST_CASE("4xx is not retried", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  HttpBackend backend(config_for(server.url("/g")));
  CHECK_THROWS_AS(backend.generate(record(), RewritePrompt::enhance(), 1), Error);
  CHECK(server.hits == 1);
}

TEST_CASE("failures become fallbacks in sample_candidates", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  HttpBackend backend(config_for(server.url("/g")));
  const auto s = sample_candidates(backend, RewritePrompt::enhance(), record(), 2);
  CHECK(s.failed);
  REQUIRE(s.candidates.size() == 2);
  CHECK(s.candidates[0].fallback);
  CHECK(s.candidates[0].text == record().vague);
}

TEST_CASE("cached responses need no requests on rerun", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"candidates":["cached text"]})", "application/json");
  });
  auto cfg = config_for(server.url("/g"));
  cfg.cache_dir = fresh_dir("http_cache");
  {
    HttpBackend first(cfg);
    first.generate(record(), RewritePrompt::enhance(), 4);
    CHECK(first.requests_sent() == 4);
  }
  HttpBackend second(cfg);
  const auto out = second.generate(record(), RewritePrompt::enhance(), 4);
  CHECK(second.requests_sent() == 0);
  CHECK(out == std::vector<std::string>(4, "cached text"));
  CHECK(server.hits == 4);
}

TEST_CASE("empty generations are not cached", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"candidates":[]})", "application/json");
  });
  auto cfg = config_for(server.url("/g"));
  cfg.cache_dir = fresh_dir("http_cache_empty");
  HttpBackend first(cfg);
  CHECK(first.generate(record(), RewritePrompt::enhance(), 1).front().empty());
  HttpBackend second(cfg);
  second.generate(record(), RewritePrompt::enhance(), 1);
  CHECK(second.requests_sent() == 1);
}

TEST_CASE("embedder reads data[0].embedding", "[http]") {
  TestServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"data":[{"embedding":[0.5,0.25,0.0]}]})", "application/json");
  });
  HttpEmbedder embedder(config_for(server.url("/embeddings")), 0);
  CHECK(embedder.dimension() == 3);
  CHECK(embedder.embed("x") == std::vector<float>{0.5f, 0.25f, 0.0f});
}

TEST_CASE("backend config validation", "[http]") {
  BackendConfig c;
  c.kind = BackendConfig::Kind::http_endpoint;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.endpoint = "http://x/y";
  c.timeout_seconds = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
