#pragma once

// Experiment configuration, per-seed runs and CSV output.
//
// Config files are flat `key = value` lines; `#` starts a comment. Unknown or
// repeated keys are errors.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ocs/error.hpp"
#include "ocs/optim.hpp"
#include "ocs/protocol.hpp"
#include "ocs/tasks.hpp"

namespace ocs {

enum class Algorithm { dsgd, fedavg };
enum class TaskKind { quadratic, logistic };

struct TaskSpec {
  TaskKind kind = TaskKind::quadratic;
  double heterogeneity = 1.0;
  WeightScheme weights = WeightScheme::uniform;
  double mu0 = 0.1;
  double L0 = 10.0;
  bool shared_curvature = false;
  double weight_sigma = 1.0;
  double center_scale = 1.0;
  std::vector<std::size_t> samples{50};  // logistic; one entry is repeated for every client
  double lambda = 0.1;
  double label_noise = 0.1;
  double feature_shift = 1.0;
  std::optional<std::uint64_t> task_seed;  // fixed federation for every run seed
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::dsgd;
  SamplerKind sampler = SamplerKind::full;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t d = 0;
  std::size_t R = 1;
  std::size_t K = 0;
  double eta = 0.0;
  double eta_l = 0.0;
  double eta_g = 1.0;
  double M = 0.0;
  double sigma2 = 0.0;
  std::size_t j_max = 4;
  unsigned float_width = 32;
  bool count_downlink = false;
  TaskSpec task;
  std::vector<std::uint64_t> seeds{0};
};

struct MetricsRow {
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
  double suboptimality = 0.0;
  double dist_sq = 0.0;
  std::size_t sampled_count = 0;
  std::optional<double> alpha;
  std::optional<double> gamma;
  std::uint64_t cumulative_uplink_bits = 0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  double initial_suboptimality = 0.0;
  double initial_dist_sq = 0.0;
  std::vector<MetricsRow> rows;
  std::optional<std::string> divergence;  // set if the seed was aborted
  std::vector<std::string> warnings;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;  // in seed-list order

  bool diverged() const {
    return std::any_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.divergence.has_value(); });
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty(),
          std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  require(!s.empty() && end == s.c_str() + s.size() && std::isfinite(out),
          std::string(key) + ": expected a finite number, got '" + s + "'");
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// "3", "1,4,9", "0-19" or any comma-separated mix.
inline std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (auto item : detail::split(text, ',')) {
    detail::require(!item.empty(), "seeds: empty entry");
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      seeds.push_back(detail::parse_uint("seeds", item));
      continue;
    }
    const auto lo = detail::parse_uint("seeds", detail::trim(item.substr(0, dash)));
    const auto hi = detail::parse_uint("seeds", detail::trim(item.substr(dash + 1)));
    detail::require(lo <= hi, "seeds: empty range '" + std::string(item) + "'");
    detail::require(hi - lo < 1000000, "seeds: range too large");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  return seeds;
}

inline void validate(const ExperimentConfig& c) {
  using detail::require;
  require(c.n >= 1, "n must be >= 1");
  require(c.d >= 1, "d must be >= 1");
  require(c.m >= 1 && c.m <= c.n, "m must satisfy 1 <= m <= n");
  require(c.K >= 1, "K must be >= 1");
  require(c.R >= 1, "R must be >= 1");
  require(c.j_max >= 1, "j_max must be >= 1");
  require(c.float_width >= 1, "float_width must be >= 1");
  require(c.M >= 0.0 && c.sigma2 >= 0.0, "M and sigma2 must be >= 0");
  if (c.algorithm == Algorithm::dsgd) {
    require(c.eta > 0.0, "eta must be > 0");
  } else {
    require(c.eta_l > 0.0 && c.eta_g > 0.0, "eta_l and eta_g must be > 0");
  }
  require(!c.seeds.empty(), "need at least one seed");
  const auto& t = c.task;
  require(t.heterogeneity >= 0.0, "heterogeneity must be >= 0");
  require(t.mu0 > 0.0 && t.L0 >= t.mu0, "need 0 < mu0 <= L0");
  require(t.weight_sigma >= 0.0, "weight_sigma must be >= 0");
  require(t.center_scale > 0.0, "center_scale must be > 0");
  if (t.kind == TaskKind::logistic) {
    require(t.samples.size() == 1 || t.samples.size() == c.n, "samples: give one count or one per client");
    for (auto s : t.samples) require(s >= 1, "samples: counts must be >= 1");
    require(t.lambda >= 0.0, "lambda must be >= 0");
    require(t.label_noise >= 0.0 && t.label_noise <= 1.0, "label_noise must lie in [0, 1]");
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  bool has_K = false;
  std::map<std::string, std::size_t> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    detail::require(eq != std::string_view::npos, where + "expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view v = detail::trim(line.substr(eq + 1));
    detail::require(!key.empty(), where + "missing key");
    detail::require(seen.emplace(key, line_no).second, where + "duplicate key '" + key + "'");
    try {
      auto& t = c.task;
      if (key == "algorithm") {
        if (v == "dsgd") c.algorithm = Algorithm::dsgd;
        else if (v == "fedavg") c.algorithm = Algorithm::fedavg;
        else throw ValidationError("algorithm: expected dsgd or fedavg");
      } else if (key == "sampler") c.sampler = parse_sampler(v);
      else if (key == "n") c.n = detail::parse_uint(key, v);
      else if (key == "m") c.m = detail::parse_uint(key, v);
      else if (key == "d") c.d = detail::parse_uint(key, v);
      else if (key == "R") c.R = detail::parse_uint(key, v);
      else if (key == "K") {
        c.K = detail::parse_uint(key, v);
        has_K = true;
      } else if (key == "eta") c.eta = detail::parse_real(key, v);
      else if (key == "eta_l") c.eta_l = detail::parse_real(key, v);
      else if (key == "eta_g") c.eta_g = detail::parse_real(key, v);
      else if (key == "M") c.M = detail::parse_real(key, v);
      else if (key == "sigma2") c.sigma2 = detail::parse_real(key, v);
      else if (key == "j_max") c.j_max = detail::parse_uint(key, v);
      else if (key == "float_width") c.float_width = static_cast<unsigned>(detail::parse_uint(key, v));
      else if (key == "count_downlink") c.count_downlink = detail::parse_bool(key, v);
      else if (key == "seeds") c.seeds = parse_seed_list(v);
      else if (key == "task") {
        if (v == "quadratic") t.kind = TaskKind::quadratic;
        else if (v == "logistic") t.kind = TaskKind::logistic;
        else throw ValidationError("task: expected quadratic or logistic");
      } else if (key == "heterogeneity") t.heterogeneity = detail::parse_real(key, v);
      else if (key == "weights") {
        if (v == "uniform") t.weights = WeightScheme::uniform;
        else if (v == "lognormal") t.weights = WeightScheme::proportional_lognormal;
        else throw ValidationError("weights: expected uniform or lognormal");
      } else if (key == "mu0") t.mu0 = detail::parse_real(key, v);
      else if (key == "L0") t.L0 = detail::parse_real(key, v);
      else if (key == "shared_curvature") t.shared_curvature = detail::parse_bool(key, v);
      else if (key == "weight_sigma") t.weight_sigma = detail::parse_real(key, v);
      else if (key == "center_scale") t.center_scale = detail::parse_real(key, v);
      else if (key == "samples") {
        t.samples.clear();
        for (auto s : detail::split(v, ',')) t.samples.push_back(detail::parse_uint(key, s));
      } else if (key == "lambda") t.lambda = detail::parse_real(key, v);
      else if (key == "label_noise") t.label_noise = detail::parse_real(key, v);
      else if (key == "feature_shift") t.feature_shift = detail::parse_real(key, v);
      else if (key == "task_seed") t.task_seed = detail::parse_uint(key, v);
      else throw ValidationError("unknown key '" + key + "'");
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  detail::require(has_K, "missing required key K");
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Running

namespace detail {

template <ClientTask Task>
SeedRun run_seed_on(const ExperimentConfig& c, const Federation<Task>& fed, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  SamplingSpec spec;
  spec.kind = c.sampler;
  spec.m = c.m;
  spec.j_max = c.j_max;
  spec.ledger.float_width = c.float_width;
  spec.ledger.count_downlink = c.count_downlink;
  const NoiseContract noise{c.M, c.sigma2};

  ModelState state{Vector::Zero(fed.dimension()), 0};
  const auto initial = exact_metrics(fed, state.x);
  run.initial_suboptimality = initial.suboptimality;
  run.initial_dist_sq = initial.dist_sq;

  BitLedger ledger(c.float_width);
  std::size_t below_floor = 0;
  for (std::size_t k = 0; k < c.K; ++k) {
    RoundResult r;
    try {
      r = c.algorithm == Algorithm::dsgd ? dsgd_round(state, fed, spec, c.eta, noise, seed)
                                         : fedavg_round(state, fed, spec, c.R, c.eta_l, c.eta_g, noise, seed);
    } catch (const DivergenceError& e) {
      run.divergence = "diverged at round " + std::to_string(k + 1) + ": " + e.what();
      break;
    }
    state = r.state;
    ledger.add(r.transcript.bits);
    const auto m = exact_metrics(fed, state.x);
    if (!std::isfinite(m.suboptimality) || !std::isfinite(m.dist_sq)) {
      run.divergence = "diverged at round " + std::to_string(k + 1) + ": non-finite objective";
      break;
    }
    if (c.algorithm == Algorithm::fedavg && c.eta_g < std::sqrt(r.metrics.gamma.value_or(1.0) / fed.sum_w2()))
      ++below_floor;
    run.rows.push_back({seed, state.round, m.suboptimality, m.dist_sq, r.metrics.sampled_count, r.metrics.alpha,
                        r.metrics.gamma, ledger.uplink_bits()});
  }
  if (below_floor > 0) {
    run.warnings.push_back("seed " + std::to_string(seed) + ": eta_g below the convex FedAvg floor in " +
                           std::to_string(below_floor) + " of " + std::to_string(run.rows.size()) + " rounds");
  }
  return run;
}

inline std::vector<std::size_t> client_samples(const TaskSpec& t, std::size_t n) {
  if (t.samples.size() == n) return t.samples;
  return std::vector<std::size_t>(n, t.samples.front());
}

}  // namespace detail

inline QuadraticFederation make_quadratic_task(const ExperimentConfig& c, std::uint64_t seed) {
  QuadraticOptions opt;
  opt.mu0 = c.task.mu0;
  opt.L0 = c.task.L0;
  opt.shared_curvature = c.task.shared_curvature;
  opt.weight_sigma = c.task.weight_sigma;
  opt.center_scale = c.task.center_scale;
  return make_quadratic_federation(c.n, static_cast<Eigen::Index>(c.d), c.task.heterogeneity, c.task.weights,
                                   c.task.task_seed.value_or(seed), opt);
}

inline LogisticFederation make_logistic_task(const ExperimentConfig& c, std::uint64_t seed) {
  LogisticOptions opt;
  opt.lambda = c.task.lambda;
  opt.label_noise = c.task.label_noise;
  opt.feature_shift = c.task.feature_shift;
  return make_logistic_federation(c.n, static_cast<Eigen::Index>(c.d), detail::client_samples(c.task, c.n),
                                  c.task.task_seed.value_or(seed), opt);
}

/// The federation is built from `seed` (or task_seed when set); gradient
/// noise and coin flips are keyed by (seed, round, client), so samplers run
/// on the same seed see the same task and the same noise.
inline SeedRun run_seed(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.task.kind == TaskKind::quadratic) return detail::run_seed_on(c, make_quadratic_task(c, seed), seed);
  return detail::run_seed_on(c, make_logistic_task(c, seed), seed);
}

/// Seeds are spread over `parallel` worker threads; results keep the order
/// of the seed list.
inline ExperimentResult run_experiment(const ExperimentConfig& c, std::size_t parallel = 1) {
  validate(c);
  ExperimentResult result;
  result.runs.resize(c.seeds.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallel, c.seeds.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = next++; i < c.seeds.size(); i = next++) result.runs[i] = run_seed(c, c.seeds[i]);
    } catch (...) {
      errors[w] = std::current_exception();
      next = c.seeds.size();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return result;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader =
    "seed,round,suboptimality,dist_sq,sampled_count,alpha,gamma,cumulative_uplink_bits";

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_row(const MetricsRow& r) {
  std::string s = std::to_string(r.seed) + ',' + std::to_string(r.round) + ',' + format_real(r.suboptimality) +
                  ',' + format_real(r.dist_sq) + ',' + std::to_string(r.sampled_count) + ',';
  if (r.alpha) s += format_real(*r.alpha);
  s += ',';
  if (r.gamma) s += format_real(*r.gamma);
  s += ',' + std::to_string(r.cumulative_uplink_bits);
  return s;
}

inline std::string to_csv(const ExperimentResult& result) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& run : result.runs) {
    for (const auto& row : run.rows) {
      out += csv_row(row);
      out += '\n';
    }
  }
  return out;
}

}  // namespace ocs
