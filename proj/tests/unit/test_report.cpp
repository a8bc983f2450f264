#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "toolbridge/report.hpp"

using namespace toolbridge;
namespace fs = std::filesystem;

namespace {

ComparisonReport sample_report() {
  ComparisonReport rep;
  rep.kind = "degradation";
  rep.retriever = "bm25";
  EvalReport specific{"specific", {5, 10}, {{"a", SubsetTag::I1, {1.0, 1.0}}, {"b", SubsetTag::I2, {0.5, 0.75}}}};
  EvalReport vague{"vague", {5, 10}, {{"a", SubsetTag::I1, {0.5, 0.5}}, {"b", SubsetTag::I2, {0.25, 0.5}}}};
  rep.runs = {specific, vague};
  rep.deltas = {{"%Δ↓", "vague", "specific"}};
  rep.extra["note"] = "x";
  return rep;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "toolbridge_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("report json carries subsets and deltas", "[report]") {
  const auto j = report_json(sample_report());
  CHECK(j["runs"][0]["subsets"]["all"]["ndcg@5"].get<double>() == Catch::Approx(0.75));
  CHECK(j["runs"][1]["subsets"]["I2"]["avg"].get<double>() == Catch::Approx(0.375));
  CHECK(j["deltas"][0]["subsets_pct"]["I1"]["ndcg@5"].get<double>() == Catch::Approx(-50.0));
  CHECK(j["extra"]["note"] == "x");
}

TEST_CASE("markdown tables", "[report]") {
  auto rep = sample_report();
  const auto md = report_markdown(rep);
  CHECK(md.find("| Method | Dataset | I1 NDCG@5 | I1 NDCG@10 | I1 Avg. |") != std::string::npos);
  CHECK(md.find("| bm25 | specific | 100.00 | 100.00 | 100.00 |") != std::string::npos);
  CHECK(md.find("| | %Δ↓ | -50.00 | -50.00 | -50.00 |") != std::string::npos);
  rep.layout = "table4";
  const auto md4 = report_markdown(rep);
  CHECK(md4.find("| Method | I1 N@5 | I1 N@10 |") != std::string::npos);
  CHECK(md4.find("Avg.") == std::string::npos);
}

TEST_CASE("table rows reproduce published deltas to two decimals", "[report]") {
  ComparisonReport rep;
  rep.kind = "trb";
  rep.retriever = "BM25";
  rep.runs = {EvalReport{"vague", {5, 10}, {{"q", SubsetTag::I2, {0.0881, 0.0973}}}},
              EvalReport{"+rewrite", {5, 10}, {{"q", SubsetTag::I2, {0.1906, 0.2011}}}}};
  rep.deltas = {{"%Δ↑", "+rewrite", "vague"}};
  const auto md = report_markdown(rep);
  CHECK(md.find("| | %Δ↑ | 116.35 | 106.68 | 111.51 |") != std::string::npos);
}

TEST_CASE("reports rebuild from per-query records", "[report]") {
  auto dir = scratch("rebuild");
  const auto rep = sample_report();
  write_report_files(dir, rep, OrderedJson{{"seed", 1}});
  for (const char* f : {"report.json", "report.md", "per_query.jsonl", "run_config.json"}) CHECK(fs::exists(dir / f));
  const auto back = rebuild_report(dir / "report.json", dir / "per_query.jsonl");
  CHECK(report_json(back).dump() == report_json(rep).dump());
  CHECK(report_markdown(back) == report_markdown(rep));
}

TEST_CASE("output lock is exclusive", "[report]") {
  auto dir = scratch("lock");
  {
    OutputLock first(dir);
    CHECK_THROWS_AS(OutputLock(dir), Error);
  }
  CHECK_NOTHROW(OutputLock(dir));
}
