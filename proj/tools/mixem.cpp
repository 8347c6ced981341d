// mixem: generate synthetic mixtures, fit them serially, on threads or over
// worker processes, serve as a worker, and benchmark thread scaling.
//
// Exit codes: 0 success (fit converged), 2 fit stopped at --max-iter, 1 error.
// Errors print one line to stderr: "error: <code>: <message>".

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixem/cli.hpp"
#include "mixem/error.hpp"
#include "mixem/json_io.hpp"
#include "mixem/kernels.hpp"
#include "mixem/multinode.hpp"
#include "mixem/scheduler.hpp"

namespace {

using namespace mixem;
using cli::LogLevel;
using cli::log_line;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ComponentFamily family_arg(const std::string& name, unsigned q) {
  try {
    return parse_family(name, q);
  } catch (const Error& e) {
    throw Error(Errc::InvalidArgument, e.what());
  }
}

struct GenerateArgs {
  std::string family = "gaussian";
  std::size_t g = 2;
  std::size_t n = 1000;
  std::size_t p = 2;
  unsigned q = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const auto family = family_arg(a.family, a.q);
  const MixtureParams params = cli::default_params(family, a.g, a.p);
  RngStream rng = rng_stream(a.seed, 0);
  const LabeledSample sample = sample_mixture(params, a.n, rng);
  cli::write_csv(a.out, sample.data);
  cli::write_labels(a.out + ".labels", sample.labels);
  log_line(LogLevel::Info, "wrote " + std::to_string(a.n) + " rows to " + a.out);
  return 0;
}

struct FitArgs {
  std::string data;
  bool header = false;
  std::string family = "gaussian";
  std::size_t g = 2;
  std::size_t threads = 0;
  std::string nodes;
  double tol = 1e-6;
  std::size_t burnin = 0;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  std::size_t starts = 0;
  std::string out;
};

FitConfig fit_config(const FitArgs& a, ComponentFamily family) {
  FitConfig config;
  config.family = family;
  config.g = a.g;
  config.m = a.threads == 0 ? 1 : a.threads;
  config.n_starts = a.starts;
  config.epsilon = a.tol;
  config.burn_in_r = a.burnin;
  config.max_iter = a.max_iter;
  config.seed = a.seed;
  config.nodes = split_list(a.nodes);
  return config;
}

int cmd_fit(const FitArgs& a) {
  const auto family = family_arg(a.family, 1);
  if (!family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  const DataSet data = cli::ingest_csv(a.data, a.header);
  FitConfig config = fit_config(a, family);

  FitResult result;
  if (!config.nodes.empty()) {
    // Without --threads the number of starts follows the network's total cores.
    if (a.threads != 0 && config.n_starts == 0) config.n_starts = a.threads;
    CoordinatorOptions options;
    if (cli::log_level_from_env() >= LogLevel::Debug) options.transcript = [](const std::string& s) { log_line(LogLevel::Debug, s); };
    result = coordinate_fit(data, config, options);
  } else if (config.m == 1) {
    // Time initialization too, as the other modes do.
    const auto t0 = std::chrono::steady_clock::now();
    WorkerPool pool(1);
    const InitCandidate start = parallel_init(data, config, pool);
    result = fit_serial(data, config, start.psi0);
    result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } else {
    result = fit_parallel(data, config);
  }
  validate_params(result.params, data.p());

  const std::string json = to_json(result);
  if (a.out.empty()) std::cout << json;
  else cli::write_file(a.out, json);
  log_line(LogLevel::Info, std::string(result.converged ? "converged" : "stopped at max-iter") + " after " +
                               std::to_string(result.n_iter) + " iterations, loglik " +
                               std::to_string(result.loglik_trace.back()));
  return result.converged ? 0 : 2;
}

struct BenchArgs {
  std::string data;
  bool header = false;
  std::string generate;
  std::string threads_list = "1,2,4";
  std::size_t reps = 3;
  std::string family = "gaussian";
  std::size_t g = 2;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  std::size_t starts = 0;
  std::string out;
};

// "n=2000,p=4,g=2,seed=1,family=gaussian"
DataSet generated_data(const std::string& spec, std::string& echo) {
  GenerateArgs a;
  a.n = 2000;
  a.p = 4;
  for (const auto& item : split_list(spec)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidArgument, "--generate expects key=value pairs");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "n") a.n = std::stoul(value);
      else if (key == "p") a.p = std::stoul(value);
      else if (key == "g") a.g = std::stoul(value);
      else if (key == "q") a.q = static_cast<unsigned>(std::stoul(value));
      else if (key == "seed") a.seed = std::stoull(value);
      else if (key == "family") a.family = value;
      else throw Error(Errc::InvalidArgument, "unknown --generate key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(Errc::InvalidArgument, "bad --generate value for '" + key + "'");
    }
  }
  RngStream rng = rng_stream(a.seed, 0);
  const auto family = family_arg(a.family, a.q);
  echo = "{\"family\":\"" + family_name(family) + "\",\"g\":" + std::to_string(a.g) + ",\"n\":" + std::to_string(a.n) +
         ",\"p\":" + std::to_string(a.p) + ",\"seed\":" + std::to_string(a.seed) + "}";
  return sample_mixture(cli::default_params(family, a.g, a.p), a.n, rng).data;
}

int cmd_bench(const BenchArgs& a) {
  const auto family = family_arg(a.family, 1);
  if (!family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  std::string data_echo;
  DataSet data;
  if (!a.generate.empty()) data = generated_data(a.generate, data_echo);
  else if (!a.data.empty()) {
    data = cli::ingest_csv(a.data, a.header);
    data_echo = "{\"path\":\"" + a.data + "\"}";
  } else {
    throw Error(Errc::InvalidArgument, "bench needs a data file or --generate");
  }

  std::vector<std::size_t> workers;
  for (const auto& item : split_list(a.threads_list)) {
    try {
      workers.push_back(std::stoul(item));
    } catch (const std::logic_error&) {
      throw Error(Errc::InvalidArgument, "bad --threads-list entry '" + item + "'");
    }
    if (workers.back() == 0) throw Error(Errc::InvalidArgument, "worker counts must be positive");
  }

  FitConfig config;
  config.family = family;
  config.g = a.g;
  config.epsilon = a.tol;
  config.max_iter = a.max_iter;
  config.seed = a.seed;
  config.n_starts = a.starts;

  cli::BenchReport report = cli::run_bench(data, config, workers, a.reps,
                                           [](const std::string& s) { log_line(LogLevel::Debug, s); });
  report.config_json = "{\"data\":" + data_echo + ",\"family\":\"" + family_name(family) + "\",\"g\":" +
                       std::to_string(a.g) + ",\"seed\":" + std::to_string(a.seed) +
                       ",\"starts\":" + std::to_string(a.starts) + ",\"simd\":\"" +
                       std::string(kernels::isa_name(kernels::active_isa())) + "\"}";
  std::cout << cli::bench_table(report);
  if (!a.out.empty()) cli::write_file(a.out, cli::bench_json(report));
  return 0;
}

struct WorkerArgs {
  std::string listen = "127.0.0.1:0";
  std::size_t cores = 0;
  double idle_timeout = 60.0;
};

int cmd_worker(const WorkerArgs& a) {
  WorkerOptions options;
  options.listen = a.listen;
  options.cores = a.cores;
  options.idle_timeout = std::chrono::milliseconds(static_cast<long long>(a.idle_timeout * 1000.0));
  options.on_listening = [](const net::Endpoint& ep) {
    std::printf("listening on %s\n", ep.str().c_str());
    std::fflush(stdout);
  };
  options.log = [](const std::string& s) { log_line(LogLevel::Info, s); };
  return run_worker(options) == SessionEnd::Stopped ? 0 : 1;
}

struct LoglikArgs {
  std::string data;
  bool header = false;
  std::string params;
  std::size_t threads = 1;
  std::size_t qmc = 4096;
};

int cmd_loglik(const LoglikArgs& a) {
  const DataSet data = cli::ingest_csv(a.data, a.header);
  const MixtureParams params = params_from_json(cli::read_file(a.params));
  WorkerPool pool(a.threads == 0 ? 1 : a.threads);
  const auto logf = parallel_log_density(data, params, pool, QmcSpec{a.qmc});
  ExactSum total;
  for (const double v : logf) total.add(v);
  std::printf("%.17g\n", total.value());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite mixture fitting with a parallel and multi-node EM engine"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Draw a labeled synthetic sample");
  g->add_option("--family", gen.family, "gaussian, t or cfust")->capture_default_str();
  g->add_option("-g,--components", gen.g, "Number of components")->capture_default_str();
  g->add_option("-n,--n", gen.n, "Number of observations")->capture_default_str();
  g->add_option("-p,--p", gen.p, "Dimension")->capture_default_str();
  g->add_option("-q,--q", gen.q, "Skew dimension (cfust)")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("-o,--out", gen.out, "Output CSV (labels go to <out>.labels)")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit a mixture by EM");
  f->add_option("data", fit.data, "CSV file")->required();
  f->add_flag("--header", fit.header, "First line is a header");
  f->add_option("--family", fit.family, "gaussian or t")->capture_default_str();
  f->add_option("-g,--components", fit.g, "Number of components")->capture_default_str();
  f->add_option("--threads", fit.threads, "Worker threads (default 1)");
  f->add_option("--nodes", fit.nodes, "Comma-separated worker endpoints host:port");
  f->add_option("--tol", fit.tol, "Aitken tolerance")->capture_default_str();
  f->add_option("--burnin", fit.burnin, "EM iterations per starting candidate")->capture_default_str();
  f->add_option("--max-iter", fit.max_iter, "Iteration limit")->capture_default_str();
  f->add_option("--seed", fit.seed, "Random seed")->capture_default_str();
  f->add_option("--starts", fit.starts, "Starting partitions (default: one per worker)");
  f->add_option("-o,--out", fit.out, "Output JSON (default stdout)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time fits across worker counts");
  b->add_option("data", bench.data, "CSV file");
  b->add_flag("--header", bench.header, "First line is a header");
  b->add_option("--generate", bench.generate, "Synthetic data instead, e.g. n=2000,p=4,g=2,seed=1");
  b->add_option("--threads-list", bench.threads_list, "Worker counts; must include 1")->capture_default_str();
  b->add_option("--reps", bench.reps, "Replications per worker count")->capture_default_str();
  b->add_option("--family", bench.family, "gaussian or t")->capture_default_str();
  b->add_option("-g,--components", bench.g, "Number of components")->capture_default_str();
  b->add_option("--tol", bench.tol, "Aitken tolerance")->capture_default_str();
  b->add_option("--max-iter", bench.max_iter, "Iteration limit")->capture_default_str();
  b->add_option("--seed", bench.seed, "Random seed")->capture_default_str();
  b->add_option("--starts", bench.starts, "Starting partitions (default: one per worker)");
  b->add_option("-o,--out", bench.out, "Also write the report as JSON");

  WorkerArgs worker;
  auto* w = app.add_subcommand("worker", "Serve one coordinator session");
  w->add_option("--listen", worker.listen, "host:port to bind (port 0 picks one)")->capture_default_str();
  w->add_option("--cores", worker.cores, "Cores to advertise and use (default: all)");
  w->add_option("--idle-timeout", worker.idle_timeout, "Seconds of silence before giving up")->capture_default_str();

  LoglikArgs ll;
  auto* l = app.add_subcommand("loglik", "Log-likelihood of data under given parameters (any family)");
  l->add_option("data", ll.data, "CSV file")->required();
  l->add_flag("--header", ll.header, "First line is a header");
  l->add_option("--params", ll.params, "Parameter JSON")->required();
  l->add_option("--threads", ll.threads, "Worker threads")->capture_default_str();
  l->add_option("--qmc", ll.qmc, "Lattice points for the skew t CDF")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: invalid_argument: %s\n", e.what());
    return 1;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*f) return cmd_fit(fit);
    if (*b) return cmd_bench(bench);
    if (*w) return cmd_worker(worker);
    if (*l) return cmd_loglik(ll);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(errc_name(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 1;
}
