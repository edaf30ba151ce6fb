#pragma once

// CSV tables for run metrics, adaptation traces, aggregates, and heatmaps.
// Numbers are written in shortest round-trip form, so a table serializes to
// the same bytes no matter how it was produced, and loading is lossless.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mesa/executor.hpp"
#include "mesa/safety.hpp"

namespace mesa::csv {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // every row has columns.size() cells

  // Column index by name; throws IoError naming the missing column.
  std::size_t col(std::string_view name) const;

  bool operator==(const Table&) const = default;
};

std::string to_string(const Table& table);
Table from_string(std::string_view text);
void save(const Table& table, const std::string& path);
Table load(const std::string& path);

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double value);

// episode, return, steps, success, violated, cumulative_violations, wall_ms
csv::Table metrics_table(const exec::RunMetrics& metrics);
exec::RunMetrics metrics_from_table(const Table& table);

// step, train_loss, heldout_loss
csv::Table trace_table(std::span<const safety::AdaptTraceRow> trace);

// Per-episode mean and standard error over runs (all must have equal length):
// episode, return_mean, return_se, success_mean, success_se,
// cumulative_violations_mean, cumulative_violations_se.
csv::Table aggregate_metrics(std::span<const exec::RunMetrics> runs);

// Heatmap file: first line "grid_n,<n>", then n lines of n values each,
// row-major with y as the slow index.
void save_heatmap(const std::string& path, std::size_t grid_n, std::span<const double> values);
struct Heatmap {
  std::size_t grid_n = 0;
  std::vector<double> values;
};
Heatmap load_heatmap(const std::string& path);

}  // namespace mesa::csv
