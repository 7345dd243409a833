// ocs: command-line front end.
//
//   ocs run --config FILE [--out FILE] [--seeds LIST] [--parallel N]
//   ocs probs NORMS --m M [--method ocs|aocs] [--j-max J]
//   ocs variance NORMS PROBS [--m M]
//   ocs caps THEOREM --L L [--mu MU] [--W W] [--M M] [--R R] [--gamma G] [--sum-w2 S]
//
// NORMS and PROBS are files of whitespace-separated numbers ("-" reads
// standard input). Exit codes: 0 success, 1 invalid input, 2 divergence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ocs/ocs.hpp"

namespace {

constexpr int kValidationExit = 1;
constexpr int kDivergenceExit = 2;

std::string read_text(const std::string& path) {
  if (path == "-") return std::string(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  std::ifstream in(path);
  if (!in) throw ocs::ValidationError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<double> read_numbers(const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw ocs::ValidationError(path + ": not a number: '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ocs::ValidationError(path + ": no numbers found");
  return out;
}

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// %g, but integral values keep a trailing ".0".
std::string short_real_point(double v) {
  std::string s = short_real(v);
  if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

int cmd_run(const std::string& config_path, const std::string& out_path, const std::string& seeds,
            std::size_t parallel) {
  auto config = ocs::parse_config(read_text(config_path));
  if (!seeds.empty()) config.seeds = ocs::parse_seed_list(seeds);
  const auto result = ocs::run_experiment(config, parallel);
  const auto csv = ocs::to_csv(result);
  if (out_path.empty() || out_path == "-") {
    std::cout << csv;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ocs::ValidationError("cannot write " + out_path);
    out << csv;
  }
  for (const auto& run : result.runs) {
    for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
    if (run.divergence) std::cerr << "seed " << run.seed << " " << *run.divergence << '\n';
  }
  return result.diverged() ? kDivergenceExit : 0;
}

int cmd_probs(const std::string& norms_path, std::size_t m, const std::string& method, std::size_t j_max) {
  const ocs::WeightedNormVector norms(read_numbers(norms_path));
  ocs::ProbabilityVector p;
  if (method == "ocs") {
    p = ocs::ocs_probabilities(norms, m).probabilities;
  } else if (method == "aocs") {
    p = ocs::aocs_probabilities(norms, m, j_max == 0 ? norms.size() : j_max).probabilities;
  } else {
    throw ocs::ValidationError("unknown method '" + method + "'");
  }
  for (std::size_t i = 0; i < p.size(); ++i) std::cout << (i ? " " : "") << short_real(p[i]);
  std::cout << '\n';
  return 0;
}

int cmd_variance(const std::string& norms_path, const std::string& probs_path, std::size_t m) {
  const ocs::WeightedNormVector norms(read_numbers(norms_path));
  const auto raw = read_numbers(probs_path);
  if (raw.size() != norms.size()) throw ocs::ValidationError("norms and probabilities differ in length");
  double total = 0.0;
  for (double v : raw) total += v;
  if (m == 0) m = static_cast<std::size_t>(std::max(1.0, std::round(total)));
  // Probabilities printed at six digits may overshoot the budget slightly.
  const auto slack = static_cast<std::size_t>(std::ceil(total - 1e-6));
  const ocs::ProbabilityVector p(raw, std::max(m, slack));
  const double var = ocs::estimator_variance(norms, p);
  std::cout << short_real_point(var);
  if (m <= norms.size()) {
    const auto f = ocs::variance_ratio(norms, p, m);
    std::cout << " alpha=" << short_real(f.alpha) << " gamma=" << short_real(f.gamma);
  }
  std::cout << '\n';
  return 0;
}

int cmd_caps(const std::string& theorem, const ocs::TheoremConstants& c, double gamma) {
  const auto caps = ocs::step_size_caps(ocs::parse_theorem(theorem), c, gamma);
  std::cout << short_real(caps.eta_cap);
  if (caps.eta_g_floor) std::cout << " eta_g_floor=" << short_real(*caps.eta_g_floor);
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal client sampling simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, seeds;
  std::size_t parallel = 1;
  auto* run = app.add_subcommand("run", "run an experiment config and write CSV");
  run->add_option("--config,config", config_path, "config file")->required();
  run->add_option("--out", out_path, "CSV output path (default: stdout)");
  run->add_option("--seeds", seeds, "seed list overriding the config, e.g. 0-19 or 1,4,9");
  run->add_option("--parallel", parallel, "worker threads")->check(CLI::PositiveNumber);

  std::string norms_path, probs_path, method = "ocs";
  std::size_t m = 0, j_max = 0;
  auto* probs = app.add_subcommand("probs", "print sampling probabilities for a norm vector");
  probs->add_option("norms", norms_path, "file of norms")->required();
  probs->add_option("--m", m, "budget m")->required();
  probs->add_option("--method", method, "ocs or aocs");
  probs->add_option("--j-max", j_max, "aocs iteration cap (default n)");

  std::size_t var_m = 0;
  auto* variance = app.add_subcommand("variance", "print estimator variance with alpha and gamma");
  variance->add_option("norms", norms_path, "file of norms")->required();
  variance->add_option("probs", probs_path, "file of probabilities")->required();
  variance->add_option("--m", var_m, "budget m (default: rounded sum of probabilities)");

  std::string theorem;
  ocs::TheoremConstants constants;
  double gamma = 1.0;
  auto* caps = app.add_subcommand("caps", "print theorem step-size bounds");
  caps->add_option("theorem", theorem, "dsgd_cvx, dsgd_ncvx, fedavg_cvx or fedavg_ncvx")->required();
  caps->add_option("--L", constants.L, "smoothness")->required();
  caps->add_option("--mu", constants.mu, "strong convexity");
  caps->add_option("--W", constants.W, "max client weight");
  caps->add_option("--M", constants.M, "relative noise");
  caps->add_option("--R", constants.R, "local steps");
  caps->add_option("--gamma", gamma, "relative improvement factor");
  caps->add_option("--sum-w2", constants.sum_w2, "sum of squared weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }

  try {
    if (*run) return cmd_run(config_path, out_path, seeds, parallel);
    if (*probs) return cmd_probs(norms_path, m, method, j_max);
    if (*variance) return cmd_variance(norms_path, probs_path, var_m);
    if (*caps) return cmd_caps(theorem, constants, gamma);
  } catch (const ocs::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDivergenceExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationExit;
  }
  return kValidationExit;
}
