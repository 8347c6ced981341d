#include "mixem/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "mixem/error.hpp"
#include "mixem/scheduler.hpp"

namespace mixem::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string fmt(double v, const char* spec = "%.17g") {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(Errc::Io, "cannot read " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << text;
  out.flush();
  if (!out) throw Error(Errc::Io, "cannot write " + path);
}

DataSet parse_csv(const std::string& text, bool has_header) {
  std::vector<double> values;
  std::size_t p = 0;
  std::size_t n = 0;
  std::size_t row = 0;
  std::size_t pos = 0;
  bool header_pending = has_header;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
    pos = eol + 1;
    ++row;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    if (line.empty()) continue;

    std::size_t col = 0;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      const auto cell = trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      ++col;
      if (p != 0 && col > p) throw ParseError(row, col, "row has more than " + std::to_string(p) + " fields");
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      const auto [end, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || end != last || !std::isfinite(v))
        throw ParseError(row, col, "not a finite number: '" + std::string(cell) + "'");
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (p == 0) p = col;
    if (col != p) throw ParseError(row, col + 1, "expected " + std::to_string(p) + " fields, found " + std::to_string(col));
    ++n;
  }
  if (n == 0) throw ParseError(row == 0 ? 1 : row, 1, "no data rows");
  return DataSet(n, p, std::move(values));
}

DataSet ingest_csv(const std::string& path, bool has_header) { return parse_csv(read_file(path), has_header); }

void write_csv(const std::string& path, const DataSet& data) {
  std::string out;
  for (std::size_t j = 0; j < data.n(); ++j) {
    const auto y = data.row(j);
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (k) out += ',';
      out += fmt(y[k]);
    }
    out += '\n';
  }
  write_file(path, out);
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::string out;
  for (const int l : labels) out += std::to_string(l) + '\n';
  write_file(path, out);
}

std::vector<int> read_labels(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<int> labels;
  std::size_t row = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++row;
    const auto cell = trim(line);
    if (cell.empty()) continue;
    int v = 0;
    const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || end != cell.data() + cell.size()) throw ParseError(row, 1, "not an integer label");
    labels.push_back(v);
  }
  return labels;
}

MixtureParams default_params(ComponentFamily family, std::size_t g, std::size_t p) {
  if (g == 0 || p == 0) throw Error(Errc::InvalidArgument, "need at least one component and one dimension");
  MixtureParams params;
  params.family = family;
  params.pi.assign(g, 1.0 / static_cast<double>(g));
  for (std::size_t i = 0; i < g; ++i) {
    ComponentParams c;
    c.mu.assign(p, 0.0);
    if (p == 1) {
      c.mu[0] = g == 1 ? 0.0 : 5.0 * (2.0 * static_cast<double>(i) / static_cast<double>(g - 1) - 1.0);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(g);
      c.mu[0] = 5.0 * std::cos(angle);
      c.mu[1] = 5.0 * std::sin(angle);
    }
    c.sigma = Matrix::identity(p);
    if (family.kind == ComponentFamily::Kind::Cfust) {
      c.delta = Matrix(p, family.q);
      std::fill(c.delta.data.begin(), c.delta.data.end(), 2.0);
    }
    if (family.has_nu()) c.nu = 5.0;
    params.components.push_back(std::move(c));
  }
  return params;
}

double prt(double baseline, double t) { return (baseline - t) / baseline * 100.0; }

void summarize(BenchReport& report) {
  const BenchRow* base = nullptr;
  for (auto& row : report.rows) {
    const double k = static_cast<double>(row.times.size());
    double sum = 0.0;
    for (const double t : row.times) sum += t;
    row.mean = sum / k;
    double ss = 0.0;
    for (const double t : row.times) ss += (t - row.mean) * (t - row.mean);
    row.sd = row.times.size() > 1 ? std::sqrt(ss / (k - 1.0)) : std::numeric_limits<double>::quiet_NaN();
    if (row.m == 1) base = &row;
  }
  if (!base) throw Error(Errc::BaselineMissing, "the worker list must include 1 as the baseline");
  for (auto& row : report.rows) {
    if (row.m == 1) row.prt.reset();
    else row.prt = prt(base->mean, row.mean);
  }
}

std::string bench_table(const BenchReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%4s  %12s  %10s  %8s\n", "m", "mean (s)", "sd (s)", "PRT (%)");
  out += buf;
  for (const auto& row : report.rows) {
    const std::string sd = std::isfinite(row.sd) ? fmt(row.sd, "%.4f") : "n/a";
    const std::string reduction = row.prt ? fmt(*row.prt, "%.2f") : "";
    std::snprintf(buf, sizeof buf, "%4zu  %12.4f  %10s  %8s\n", row.m, row.mean, sd.c_str(), reduction.c_str());
    out += buf;
  }
  return out;
}

std::string bench_json(const BenchReport& report) {
  std::string out = "{\"replications\":" + std::to_string(report.replications);
  out += ",\"config\":" + (report.config_json.empty() ? std::string("{}") : report.config_json);
  out += ",\"rows\":[";
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const auto& row = report.rows[r];
    if (r) out += ',';
    out += "{\"m\":" + std::to_string(row.m) + ",\"times\":[";
    for (std::size_t k = 0; k < row.times.size(); ++k) out += (k ? "," : "") + fmt(row.times[k]);
    out += "],\"mean\":" + fmt(row.mean) + ",\"sd\":" + fmt(row.sd);
    out += ",\"prt\":" + (row.prt ? fmt(*row.prt) : std::string("null"));
    out += ",\"final_loglik\":" + fmt(row.final_loglik) + ",\"n_iter\":" + std::to_string(row.n_iter) + "}";
  }
  out += "]}\n";
  return out;
}

BenchReport run_bench(const DataSet& data, const FitConfig& base, const std::vector<std::size_t>& workers,
                      std::size_t reps, const std::function<void(const std::string&)>& progress) {
  if (reps == 0) throw Error(Errc::InvalidArgument, "need at least one replication");
  BenchReport report;
  report.replications = reps;
  bool has_baseline = false;
  for (const auto m : workers) has_baseline = has_baseline || m == 1;
  if (!has_baseline) throw Error(Errc::BaselineMissing, "the worker list must include 1 as the baseline");
  for (const auto m : workers) {
    BenchRow row;
    row.m = m;
    FitConfig config = base;
    config.m = m;
    for (std::size_t r = 0; r < reps; ++r) {
      const FitResult fit = fit_parallel(data, config);
      row.times.push_back(fit.wall_time_s);
      row.final_loglik = fit.loglik_trace.back();
      row.n_iter = fit.n_iter;
      if (progress) progress("m=" + std::to_string(m) + " rep " + std::to_string(r + 1) + ": " + fmt(fit.wall_time_s, "%.4f") + " s");
    }
    report.rows.push_back(std::move(row));
  }
  summarize(report);
  return report;
}

LogLevel log_level_from_env() {
  const char* v = std::getenv("MIXEM_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void log_line(LogLevel level, const std::string& message) {
  static const LogLevel threshold = log_level_from_env();
  if (level > threshold) return;
  std::cerr << message << '\n';
}

}  // namespace mixem::cli
