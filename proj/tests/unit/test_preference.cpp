#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "toolbridge/preference.hpp"
#include "toolbridge/synthetic.hpp"

using namespace toolbridge;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SyntheticData data = gen_synthetic({60, 40, 1, 3, 400, 5});
  std::shared_ptr<const Corpus> corpus = std::make_shared<const Corpus>(Corpus::from_docs(data.docs));
  Bm25Index bm25{corpus};
};

CandidateRewrite cand(std::size_t j, std::string text, std::optional<double> score, bool fallback = false) {
  return CandidateRewrite{"q", j, std::move(text), score, fallback, {}};
}

void check_accounting(const DatasetSummary& s) {
  CHECK(s.records == s.pairs_kept + s.dropped_equal + s.dropped_insufficient);
}

}  // namespace

TEST_CASE("pair picks first max and first min", "[preference]") {
  const std::vector<CandidateRewrite> c{cand(0, "a", 0.5), cand(1, "b", 0.9), cand(2, "c", 0.1), cand(3, "d", 0.9),
                                        cand(4, "e", 0.1)};
  const auto d = decide_pair(c, "vague");
  REQUIRE(d.pair);
  CHECK(d.outcome == PairOutcome::kept);
  CHECK(d.pair->chosen == "b");
  CHECK(d.pair->rejected == "c");
  CHECK(d.pair->prompt == "vague");
  CHECK(d.pair->score_chosen > d.pair->score_rejected);
}

TEST_CASE("ties, fallbacks and missing scores", "[preference]") {
  CHECK(decide_pair({cand(0, "a", 0.5), cand(1, "b", 0.5)}, "v").outcome == PairOutcome::equal_reward);
  CHECK(decide_pair({cand(0, "a", 0.5), cand(1, "a", 0.7)}, "v").outcome == PairOutcome::equal_reward);
  CHECK(decide_pair({cand(0, "a", 0.5)}, "v").outcome == PairOutcome::insufficient);
  CHECK(decide_pair({cand(0, "a", 0.5), cand(1, "v", 0.0, true)}, "v").outcome == PairOutcome::insufficient);
  CHECK(decide_pair({cand(0, "a", 0.5), cand(1, "b", std::nullopt)}, "v").outcome == PairOutcome::insufficient);
}

TEST_CASE("score_candidate is the mean of NDCG@5 and NDCG@10", "[preference]") {
  Fixture f;
  const auto& rec = f.data.queries.front();
  const auto relevant = f.corpus->relevant_ids(rec);
  CandidateRewrite c{rec.query_id, 0, *rec.specific, std::nullopt, false, {}};
  const auto s = score_candidate(c, f.bm25, relevant);
  REQUIRE(s);
  const auto r10 = f.bm25.retrieve(c.text, 10);
  const auto r5 = f.bm25.retrieve(c.text, 5);
  CHECK(*s == Catch::Approx(avg_score(r5, r10, relevant)));
}

TEST_CASE("mock dataset: pairs are strictly ordered and accounted", "[preference]") {
  Fixture f;
  const auto data = build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 4, 2);
  check_accounting(data.summary);
  CHECK(data.summary.pairs_kept > 0);
  for (const auto& p : data.pairs) {
    CHECK(p.score_chosen > p.score_rejected);
    CHECK(p.chosen != p.rejected);
  }
}

TEST_CASE("identity backend produces no pairs", "[preference]") {
  Fixture f;
  const auto data = build_dpo_dataset(f.data.queries, IdentityBackend(), RewritePrompt::enhance(), f.bm25, 4);
  CHECK(data.pairs.empty());
  CHECK(data.summary.dropped_equal == f.data.queries.size());
  check_accounting(data.summary);
  CHECK_FALSE(data.summary.warnings.empty());
}

TEST_CASE("n = 1 warns and pairs nothing", "[preference]") {
  Fixture f;
  const auto data = build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 1);
  CHECK(data.pairs.empty());
  CHECK(data.summary.warnings.front().find("n = 1") != std::string::npos);
  CHECK_THROWS_AS(build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 0), Error);
}

TEST_CASE("pairs round-trip through jsonl", "[preference]") {
  Fixture f;
  const auto data = build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 4);
  const auto dir = fs::temp_directory_path() / "toolbridge_tests" / "pairs";
  fs::create_directories(dir);
  save_pairs(data.pairs, dir / "pairs.jsonl");
  CHECK(load_pairs(dir / "pairs.jsonl") == data.pairs);
}

TEST_CASE("worker count does not change the dataset", "[preference]") {
  Fixture f;
  const auto a = build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 4, 1);
  const auto b = build_dpo_dataset(f.data.queries, MockBackend(), RewritePrompt::enhance(), f.bm25, 4, 3);
  CHECK(a.pairs == b.pairs);
}

TEST_CASE("iterate stops early on an empty round and keeps states on trainer failure", "[preference]") {
  Fixture f;
  IterateHooks hooks;
  hooks.backend_for = [](std::size_t t) {
    return std::make_pair(std::shared_ptr<const Backend>(std::make_shared<IdentityBackend>()), "id" + std::to_string(t));
  };
  hooks.train = [](std::size_t, const std::vector<PreferencePair>&) {};
  auto r = iterate(f.data.queries, hooks, f.bm25, RewritePrompt::enhance(), 3, 4);
  CHECK(r.stopped_early);
  CHECK(r.states.size() == 1);

  std::size_t persisted = 0;
  hooks.backend_for = [](std::size_t t) {
    return std::make_pair(std::shared_ptr<const Backend>(std::make_shared<MockBackend>()), "m" + std::to_string(t));
  };
  hooks.train = [](std::size_t t, const std::vector<PreferencePair>&) {
    if (t == 2) throw Error(ErrorKind::divergence, "nan");
  };
  hooks.on_iteration = [&](const std::vector<IterationState>& s) { persisted = s.size(); };
  r = iterate(f.data.queries, hooks, f.bm25, RewritePrompt::enhance(), 3, 4);
  REQUIRE(r.aborted);
  CHECK(r.states.size() == 1);
  CHECK(persisted == 1);
  CHECK_THROWS_AS(iterate(f.data.queries, hooks, f.bm25, RewritePrompt::enhance(), 0, 4), Error);
}
