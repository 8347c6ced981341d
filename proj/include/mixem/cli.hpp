#pragma once

// Pieces of the command-line tool that are worth testing on their own:
// CSV and label files, synthetic data defaults, the benchmark report and
// the log filter.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixem/model.hpp"

namespace mixem::cli {

/// Comma-separated numbers, optional header line. Blank lines are skipped.
/// Throws Io when unreadable, ParseError(row, col) for ragged or non-numeric cells.
DataSet ingest_csv(const std::string& path, bool has_header);
DataSet parse_csv(const std::string& text, bool has_header);

void write_csv(const std::string& path, const DataSet& data);
void write_labels(const std::string& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

/// Generator defaults: means spread on a circle of radius 5 in the first
/// two coordinates (on a line when p = 1), identity scales, equal weights,
/// nu = 5, and every skewness entry 2.
MixtureParams default_params(ComponentFamily family, std::size_t g, std::size_t p);

/// Percentage reduction in time relative to the baseline.
double prt(double baseline, double t);

struct BenchRow {
  std::size_t m = 0;
  std::vector<double> times;
  double mean = 0.0;
  double sd = 0.0;            // sample sd; NaN with a single replication
  std::optional<double> prt;  // empty for the baseline row
  double final_loglik = 0.0;
  std::size_t n_iter = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::size_t replications = 0;
  std::string config_json;  // echo of the run settings, a JSON object
};

/// Fills mean, sd and PRT from the raw times. Throws BaselineMissing
/// without an m = 1 row.
void summarize(BenchReport& report);

std::string bench_table(const BenchReport& report);
std::string bench_json(const BenchReport& report);

/// R fits per worker count with the same config, timed end to end.
BenchReport run_bench(const DataSet& data, const FitConfig& base, const std::vector<std::size_t>& workers,
                      std::size_t reps, const std::function<void(const std::string&)>& progress = {});

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// MIXEM_LOG in {error, info, debug}; info when unset or unrecognized.
LogLevel log_level_from_env();
void log_line(LogLevel level, const std::string& message);

}  // namespace mixem::cli
