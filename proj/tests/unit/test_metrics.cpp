#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "toolbridge/metrics.hpp"

using namespace toolbridge;

namespace {

double ndcg(std::vector<std::string> ranking, std::set<std::string> relevant, std::size_t k) {
  return ndcg_at_k(std::span<const std::string>(ranking), relevant, k);
}

}  // namespace

TEST_CASE("ndcg hand values", "[metrics]") {
  // one relevant document at rank 2 of 3; ideal has it at rank 1
  CHECK(ndcg({"C", "A", "B"}, {"A"}, 3) == Catch::Approx(1.0 / std::log2(3.0)));
  CHECK(ndcg({"C", "A", "B"}, {"A"}, 3) == Catch::Approx(0.63093).margin(1e-5));
  // two relevant documents at ranks 1 and 3
  CHECK(ndcg({"A", "C", "B"}, {"A", "B"}, 3) == Catch::Approx((1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0))));
  CHECK(ndcg({"A", "B"}, {"A", "B"}, 10) == Catch::Approx(1.0));
  CHECK(ndcg({"X", "Y"}, {"A"}, 2) == 0.0);
}

TEST_CASE("ndcg truncates the ideal at k", "[metrics]") {
  // three relevant, k = 1: a hit at rank 1 is perfect
  CHECK(ndcg({"A", "X"}, {"A", "B", "C"}, 1) == Catch::Approx(1.0));
  // ranking shorter than k
  CHECK(ndcg({"A"}, {"A", "B"}, 5) == Catch::Approx(1.0 / (1.0 + 1.0 / std::log2(3.0))));
}

TEST_CASE("ndcg argument errors", "[metrics]") {
  CHECK_THROWS_AS(ndcg({"A"}, {}, 5), Error);
  CHECK_THROWS_AS(ndcg({"A"}, {"A"}, 0), Error);
}

TEST_CASE("ndcg matches the permutation oracle", "[metrics]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<std::string> docs;
    for (std::size_t i = 0; i < n; ++i) docs.push_back("d" + std::to_string(i));
    std::set<std::string> relevant;
    while (relevant.empty()) {
      for (const auto& d : docs) {
        if (rng() % 2) relevant.insert(d);
      }
    }
    auto ranking = docs;
    std::shuffle(ranking.begin(), ranking.end(), rng);
    const std::size_t k = 1 + rng() % 6;
    REQUIRE(ndcg(ranking, relevant, k) == Catch::Approx(oracle::ndcg_bruteforce(ranking, relevant, docs, k)).margin(1e-9));
  }
}

TEST_CASE("relative deltas follow the table convention", "[metrics]") {
  CHECK(relative_delta(19.06, 8.81) == Catch::Approx(116.345).margin(1e-3));
  CHECK(relative_delta(20.11, 9.73) == Catch::Approx(106.680).margin(1e-3));
  const std::vector<double> now{19.06, 20.11}, before{8.81, 9.73};
  // mean of per-k deltas, not the delta of the means
  CHECK(avg_relative_delta(now, before) == Catch::Approx(111.51).margin(5e-3));
  CHECK(relative_delta((19.06 + 20.11) / 2, (8.81 + 9.73) / 2) == Catch::Approx(111.27).margin(5e-3));
  CHECK(relative_delta(1.0, 1.0) == 0.0);
  CHECK_THROWS_AS(relative_delta(1.0, 0.0), Error);
}

TEST_CASE("avg_score is the mean of the two cutoffs", "[metrics]") {
  RankedList r5{"q", {{"X", 2.0}, {"A", 1.0}}};
  RankedList r10{"q", {{"X", 2.0}, {"A", 1.0}, {"B", 0.5}}};
  const std::set<std::string> rel{"A", "B"};
  CHECK(avg_score(r5, r10, rel) == Catch::Approx((ndcg_at_k(r5, rel, 5) + ndcg_at_k(r10, rel, 10)) / 2));
}

TEST_CASE("report summaries per subset and overall", "[metrics]") {
  EvalReport r;
  r.label = "x";
  r.per_query = {{"q2", SubsetTag::I2, {0.5, 0.7}}, {"q1", SubsetTag::I1, {1.0, 1.0}}, {"q3", SubsetTag::I2, {0.0, 0.1}}};
  const auto s = r.summaries();
  REQUIRE(s.size() == 3);
  CHECK(s[0].name == "I1");
  CHECK(s[1].name == "I2");
  CHECK(s[1].count == 2);
  CHECK(s[1].mean[0] == Catch::Approx(0.25));
  CHECK(s[1].avg == Catch::Approx((0.25 + 0.4) / 2));
  CHECK(s[2].name == "all");
  CHECK(r.overall().mean[1] == Catch::Approx(0.6));
}

TEST_CASE("compare_reports leaves zero baselines undefined", "[metrics]") {
  EvalReport a, b;
  a.per_query = {{"q", SubsetTag::I1, {0.5, 0.5}}};
  b.per_query = {{"q", SubsetTag::I1, {0.0, 0.25}}};
  const auto d = compare_reports(a, b);
  REQUIRE(d.size() == 2);
  CHECK_FALSE(d[0].delta[0]);
  CHECK(*d[0].delta[1] == Catch::Approx(100.0));
  CHECK_FALSE(d[0].avg);
}
