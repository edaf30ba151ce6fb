#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "mesa/csvio.hpp"
#include "mesa/errors.hpp"

using namespace mesa;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

exec::RunMetrics sample_metrics() {
  exec::RunMetrics m;
  m.episodes = {
      {0, -1.25, 14, false, true, 1, 0.0},
      {1, 0.5, 100, true, false, 1, 0.0},
      {2, 0.0625, 37, true, false, 1, 0.0},
  };
  return m;
}

}  // namespace

TEST_CASE("format_double is shortest round trip") {
  CHECK(csv::format_double(0.0) == "0");
  CHECK(csv::format_double(1.0) == "1");
  CHECK(csv::format_double(-2.5) == "-2.5");
  CHECK(csv::format_double(0.1) == "0.1");

  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> mag(-30.0, 30.0);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double v = mant(gen) * std::pow(10.0, mag(gen));
    const std::string text = csv::format_double(v);
    CHECK(std::stod(text) == v);
  }

  CHECK_THROWS_AS(csv::format_double(std::numeric_limits<double>::infinity()), NumericError);
  CHECK_THROWS_AS(csv::format_double(std::nan("")), NumericError);
}

TEST_CASE("table serializes and parses losslessly") {
  csv::Table table;
  table.columns = {"a", "b"};
  table.rows = {{1.0, 0.1}, {-3.5, 2e-7}};

  const std::string text = csv::to_string(table);
  CHECK(text == "a,b\n1,0.1\n-3.5,2e-07\n");
  CHECK(csv::from_string(text) == table);

  // Repeated serialization is byte identical.
  CHECK(csv::to_string(csv::from_string(text)) == text);
}

TEST_CASE("table column lookup names the missing column") {
  csv::Table table;
  table.columns = {"episode", "return"};
  CHECK(table.col("return") == 1);
  try {
    (void)table.col("wall_ms");
    FAIL("expected IoError");
  } catch (const IoError& err) {
    CHECK(std::string(err.what()).find("wall_ms") != std::string::npos);
  }
}

TEST_CASE("malformed csv input is rejected") {
  CHECK_THROWS_AS(csv::from_string(""), IoError);
  CHECK_THROWS_AS(csv::from_string("a,b\n1\n"), IoError);          // short row
  CHECK_THROWS_AS(csv::from_string("a,b\n1,2,3\n"), IoError);      // long row
  CHECK_THROWS_AS(csv::from_string("a,b\n1,zebra\n"), IoError);    // not a number
  CHECK_THROWS_AS(csv::from_string("a,,c\n1,2,3\n"), IoError);     // empty header cell

  csv::Table ragged;
  ragged.columns = {"a", "b"};
  ragged.rows = {{1.0}};
  CHECK_THROWS_AS(csv::to_string(ragged), ShapeError);

  csv::Table headerless;
  CHECK_THROWS_AS(csv::to_string(headerless), IoError);
}

TEST_CASE("table file save and load round trip") {
  csv::Table table;
  table.columns = {"x"};
  table.rows = {{0.25}, {1e300}, {-5e-324}};
  const std::string path = tmp_path("mesa_test_table.csv");
  csv::save(table, path);
  CHECK(csv::load(path) == table);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(csv::load(tmp_path("mesa_no_such_file.csv")), IoError);
}

TEST_CASE("metrics table matches the pinned schema and round trips") {
  const exec::RunMetrics metrics = sample_metrics();
  const csv::Table table = csv::metrics_table(metrics);
  CHECK(table.columns == std::vector<std::string>{"episode", "return", "steps", "success",
                                                  "violated", "cumulative_violations",
                                                  "wall_ms"});
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0][table.col("return")] == -1.25);
  CHECK(table.rows[1][table.col("success")] == 1.0);
  CHECK(table.rows[0][table.col("violated")] == 1.0);

  CHECK(csv::metrics_from_table(table) == metrics);
  CHECK(csv::metrics_from_table(csv::from_string(csv::to_string(table))) == metrics);
}

TEST_CASE("trace table replaces the no-holdout sentinel") {
  std::vector<safety::AdaptTraceRow> trace = {
      {0, 0.5, 0.25},
      {1, 0.4, std::numeric_limits<double>::quiet_NaN()},
  };
  const csv::Table table = csv::trace_table(trace);
  CHECK(table.columns == std::vector<std::string>{"step", "train_loss", "heldout_loss"});
  CHECK(table.rows[0][2] == 0.25);
  CHECK(table.rows[1][2] == -1.0);
  CHECK_NOTHROW(csv::to_string(table));
}

TEST_CASE("aggregate of identical runs equals the run with zero spread") {
  const exec::RunMetrics run = sample_metrics();
  const std::vector<exec::RunMetrics> runs = {run, run, run};
  const csv::Table agg = csv::aggregate_metrics(runs);
  REQUIRE(agg.rows.size() == run.episodes.size());
  for (std::size_t e = 0; e < run.episodes.size(); ++e) {
    CHECK(agg.rows[e][agg.col("episode")] == static_cast<double>(e));
    CHECK(agg.rows[e][agg.col("return_mean")] == run.episodes[e].episode_return);
    CHECK(agg.rows[e][agg.col("return_se")] == 0.0);
    CHECK(agg.rows[e][agg.col("success_mean")] == (run.episodes[e].success ? 1.0 : 0.0));
    CHECK(agg.rows[e][agg.col("success_se")] == 0.0);
    CHECK(agg.rows[e][agg.col("cumulative_violations_mean")] ==
          static_cast<double>(run.episodes[e].cumulative_violations));
  }
}

TEST_CASE("aggregate mean and standard error match hand values") {
  exec::RunMetrics a, b;
  a.episodes = {{0, 1.0, 5, true, false, 0, 0.0}};
  b.episodes = {{0, 3.0, 7, false, true, 1, 0.0}};
  const std::vector<exec::RunMetrics> runs = {a, b};
  const csv::Table agg = csv::aggregate_metrics(runs);
  REQUIRE(agg.rows.size() == 1);
  // mean 2, sample variance (1^2 + 1^2)/(2-1) = 2, SE = sqrt(2/2) = 1.
  CHECK(agg.rows[0][agg.col("return_mean")] == 2.0);
  CHECK(agg.rows[0][agg.col("return_se")] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(agg.rows[0][agg.col("success_mean")] == 0.5);
  CHECK(agg.rows[0][agg.col("success_se")] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(agg.rows[0][agg.col("cumulative_violations_mean")] == 0.5);

  // A single run reports zero standard error.
  const csv::Table single = csv::aggregate_metrics(std::vector<exec::RunMetrics>{a});
  CHECK(single.rows[0][single.col("return_se")] == 0.0);

  exec::RunMetrics longer;
  longer.episodes = {{0, 1.0, 5, true, false, 0, 0.0}, {1, 1.0, 5, true, false, 0, 0.0}};
  CHECK_THROWS_AS(csv::aggregate_metrics(std::vector<exec::RunMetrics>{a, longer}), ShapeError);
  CHECK_THROWS_AS(csv::aggregate_metrics(std::vector<exec::RunMetrics>{}), ConfigError);
}

TEST_CASE("heatmap file round trips and validates layout") {
  const std::size_t n = 3;
  std::vector<double> values(n * n);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.01 * static_cast<double>(i);
  const std::string path = tmp_path("mesa_test_heatmap.csv");
  csv::save_heatmap(path, n, values);

  // The file starts with the pinned header line.
  {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(first == "grid_n,3");
  }

  const csv::Heatmap map = csv::load_heatmap(path);
  CHECK(map.grid_n == n);
  CHECK(map.values == values);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(csv::save_heatmap(path, 2, values), ShapeError);
  CHECK_THROWS_AS(csv::save_heatmap(path, 0, {}), ShapeError);
}

TEST_CASE("corrupt heatmap files are rejected") {
  const std::string path = tmp_path("mesa_test_heatmap_bad.csv");
  const auto write_text = [&](const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
  };

  write_text("grid,2\n1,2\n3,4\n");
  CHECK_THROWS_AS(csv::load_heatmap(path), IoError);
  write_text("grid_n,2\n1,2,3\n4,5\n");
  CHECK_THROWS_AS(csv::load_heatmap(path), IoError);
  write_text("grid_n,2\n1,2\n");
  CHECK_THROWS_AS(csv::load_heatmap(path), IoError);
  write_text("grid_n,0\n");
  CHECK_THROWS_AS(csv::load_heatmap(path), IoError);
  std::filesystem::remove(path);
}
