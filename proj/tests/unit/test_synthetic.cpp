#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <set>

#include "toolbridge/synthetic.hpp"

using namespace toolbridge;

TEST_CASE("synthetic data is a pure function of the spec", "[synthetic]") {
  const auto a = gen_synthetic({});
  const auto b = gen_synthetic({});
  REQUIRE(a.docs.size() == 200);
  REQUIRE(a.queries.size() == 100);
  for (std::size_t i = 0; i < a.docs.size(); ++i) CHECK(a.docs[i].description == b.docs[i].description);
  for (std::size_t i = 0; i < a.queries.size(); ++i) CHECK(a.queries[i].vague == b.queries[i].vague);
  SyntheticSpec other;
  other.seed = 43;
  CHECK(gen_synthetic(other).queries.front().vague != a.queries.front().vague);
}

TEST_CASE("synthetic records are consistent with the corpus", "[synthetic]") {
  const auto data = gen_synthetic({});
  const auto corpus = Corpus::from_docs(data.docs);
  for (const auto& q : data.queries) {
    CHECK(validate_query(q, corpus).empty());
    CHECK(q.ground_truth.size() >= 1);
    CHECK(q.ground_truth.size() <= 3);
    CHECK(q.subset == (q.ground_truth.size() == 1 ? SubsetTag::I1 : q.ground_truth.size() == 2 ? SubsetTag::I2
                                                                                               : SubsetTag::I3));
    REQUIRE(q.specific);
    for (const auto& ref : q.ground_truth) CHECK(q.specific->find(ref.tool_name) != std::string::npos);
  }
}

TEST_CASE("vague queries never contain ground-truth name tokens", "[synthetic]") {
  const auto data = gen_synthetic({});
  for (const auto& q : data.queries) {
    const auto toks = tokenize(q.vague);
    const std::set<std::string> vague(toks.begin(), toks.end());
    for (const auto& ref : q.ground_truth) {
      for (const auto& t : tokenize(ref.tool_name + " " + ref.api_name)) CHECK_FALSE(vague.count(t));
    }
  }
}

TEST_CASE("synthetic spec validation", "[synthetic]") {
  CHECK_THROWS_AS(gen_synthetic({200, 100, 1, 3, 300, 1}), Error);
  CHECK_THROWS_AS(gen_synthetic({10, 5, 3, 2, 500, 1}), Error);
  CHECK_THROWS_AS(gen_synthetic({2, 5, 1, 3, 500, 1}), Error);
  CHECK_THROWS_AS(gen_synthetic({0, 5, 1, 1, 500, 1}), Error);
}

TEST_CASE("default generation is fast", "[synthetic]") {
  const auto t0 = std::chrono::steady_clock::now();
  gen_synthetic({});
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(1));
}
