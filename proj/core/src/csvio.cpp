#include "mesa/csvio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "mesa/errors.hpp"

namespace mesa::csv {

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw IoError("csv: malformed number '" + std::string(text) + "'");
  return value;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("csv: cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("csv: cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("csv: short write to '" + path + "'");
}

}  // namespace

std::string format_double(double value) {
  if (!std::isfinite(value)) throw NumericError("csv: refusing to write a non-finite value");
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc()) throw NumericError("csv: number formatting failed");
  return std::string(buffer, ptr);
}

std::size_t Table::col(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw IoError("csv: missing column '" + std::string(name) + "'");
}

std::string to_string(const Table& table) {
  if (table.columns.empty()) throw IoError("csv: table needs at least one column");
  std::string out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i > 0) out += ',';
    out += table.columns[i];
  }
  out += '\n';
  for (const std::vector<double>& row : table.rows) {
    if (row.size() != table.columns.size())
      throw ShapeError("csv: row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

Table from_string(std::string_view text) {
  Table table;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::vector<std::string_view> parts = split(line, ',');
    if (header) {
      for (std::string_view p : parts) {
        if (p.empty()) throw IoError("csv: empty column name in header");
        table.columns.emplace_back(p);
      }
      header = false;
      continue;
    }
    if (parts.size() != table.columns.size())
      throw IoError("csv: row has " + std::to_string(parts.size()) + " cells, expected " +
                    std::to_string(table.columns.size()));
    std::vector<double> row;
    row.reserve(parts.size());
    for (std::string_view p : parts) row.push_back(parse_double(p));
    table.rows.push_back(std::move(row));
  }
  if (header) throw IoError("csv: empty input");
  return table;
}

void save(const Table& table, const std::string& path) { write_file(path, to_string(table)); }

Table load(const std::string& path) { return from_string(read_file(path)); }

Table metrics_table(const exec::RunMetrics& metrics) {
  Table table;
  table.columns = {"episode", "return",   "steps",              "success",
                   "violated", "cumulative_violations", "wall_ms"};
  table.rows.reserve(metrics.episodes.size());
  for (const exec::EpisodeRow& row : metrics.episodes)
    table.rows.push_back({static_cast<double>(row.episode), row.episode_return,
                          static_cast<double>(row.steps), row.success ? 1.0 : 0.0,
                          row.violated ? 1.0 : 0.0,
                          static_cast<double>(row.cumulative_violations), row.wall_ms});
  return table;
}

exec::RunMetrics metrics_from_table(const Table& table) {
  const std::size_t c_episode = table.col("episode");
  const std::size_t c_return = table.col("return");
  const std::size_t c_steps = table.col("steps");
  const std::size_t c_success = table.col("success");
  const std::size_t c_violated = table.col("violated");
  const std::size_t c_cumulative = table.col("cumulative_violations");
  const std::size_t c_wall = table.col("wall_ms");

  exec::RunMetrics metrics;
  metrics.episodes.reserve(table.rows.size());
  for (const std::vector<double>& row : table.rows) {
    exec::EpisodeRow out;
    out.episode = static_cast<std::size_t>(row[c_episode]);
    out.episode_return = row[c_return];
    out.steps = static_cast<std::size_t>(row[c_steps]);
    out.success = row[c_success] != 0.0;
    out.violated = row[c_violated] != 0.0;
    out.cumulative_violations = static_cast<std::size_t>(row[c_cumulative]);
    out.wall_ms = row[c_wall];
    metrics.episodes.push_back(std::move(out));
  }
  return metrics;
}

Table trace_table(std::span<const safety::AdaptTraceRow> trace) {
  Table table;
  table.columns = {"step", "train_loss", "heldout_loss"};
  table.rows.reserve(trace.size());
  for (const safety::AdaptTraceRow& row : trace) {
    // CSV cells must be finite; the no-split sentinel NaN becomes -1.
    const double heldout = std::isnan(row.heldout_loss) ? -1.0 : row.heldout_loss;
    table.rows.push_back({static_cast<double>(row.step), row.train_loss, heldout});
  }
  return table;
}

Table aggregate_metrics(std::span<const exec::RunMetrics> runs) {
  if (runs.empty()) throw ConfigError("aggregate: needs at least one run");
  const std::size_t n_episodes = runs.front().episodes.size();
  for (const exec::RunMetrics& run : runs)
    if (run.episodes.size() != n_episodes)
      throw ShapeError("aggregate: runs have different episode counts");

  const double n = static_cast<double>(runs.size());
  const auto mean_se = [&](auto&& get, std::size_t episode) {
    double mean = 0.0;
    for (const exec::RunMetrics& run : runs) mean += get(run.episodes[episode]);
    mean /= n;
    double var = 0.0;
    for (const exec::RunMetrics& run : runs) {
      const double d = get(run.episodes[episode]) - mean;
      var += d * d;
    }
    // Standard error with the n-1 sample variance; zero for a single run.
    const double se = runs.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    return std::pair{mean, se};
  };

  Table table;
  table.columns = {"episode",
                   "return_mean",
                   "return_se",
                   "success_mean",
                   "success_se",
                   "cumulative_violations_mean",
                   "cumulative_violations_se"};
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const auto ret = mean_se([](const exec::EpisodeRow& r) { return r.episode_return; }, e);
    const auto suc =
        mean_se([](const exec::EpisodeRow& r) { return r.success ? 1.0 : 0.0; }, e);
    const auto cum = mean_se(
        [](const exec::EpisodeRow& r) { return static_cast<double>(r.cumulative_violations); },
        e);
    table.rows.push_back(
        {static_cast<double>(e), ret.first, ret.second, suc.first, suc.second, cum.first,
         cum.second});
  }
  return table;
}

void save_heatmap(const std::string& path, std::size_t grid_n, std::span<const double> values) {
  if (grid_n == 0 || values.size() != grid_n * grid_n)
    throw ShapeError("heatmap: values must form a grid_n x grid_n grid");
  std::string out = "grid_n," + std::to_string(grid_n) + "\n";
  for (std::size_t iy = 0; iy < grid_n; ++iy) {
    for (std::size_t ix = 0; ix < grid_n; ++ix) {
      if (ix > 0) out += ',';
      out += format_double(values[iy * grid_n + ix]);
    }
    out += '\n';
  }
  write_file(path, out);
}

Heatmap load_heatmap(const std::string& path) {
  const std::string text = read_file(path);
  Heatmap map;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = std::string_view(text).substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::vector<std::string_view> parts = split(line, ',');
    if (line_no == 0) {
      if (parts.size() != 2 || parts[0] != "grid_n")
        throw IoError("heatmap: first line must be 'grid_n,<n>'");
      map.grid_n = static_cast<std::size_t>(parse_double(parts[1]));
      if (map.grid_n == 0) throw IoError("heatmap: grid_n must be positive");
      map.values.reserve(map.grid_n * map.grid_n);
    } else {
      if (parts.size() != map.grid_n) throw IoError("heatmap: row width != grid_n");
      for (std::string_view p : parts) map.values.push_back(parse_double(p));
    }
    ++line_no;
  }
  if (map.values.size() != map.grid_n * map.grid_n)
    throw IoError("heatmap: expected grid_n rows of grid_n values");
  return map;
}

}  // namespace mesa::csv
