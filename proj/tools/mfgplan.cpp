// mfgplan command-line front end. Results go to stdout or files as CSV/JSON.
//
// Exit codes: 0 success (including negative findings), 1 numerical failure,
// 2 usage or input error.

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mfgplan/analysis.hpp"
#include "mfgplan/chain.hpp"
#include "mfgplan/dynamics.hpp"
#include "mfgplan/error.hpp"
#include "mfgplan/hamiltonian.hpp"
#include "mfgplan/model.hpp"
#include "mfgplan/planning.hpp"

using namespace mfgplan;
using nlohmann::json;

namespace {

int g_workers = 0;

void apply_workers() {
  if (g_workers > 0) omp_set_num_threads(g_workers);
}

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open file '" + path + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write file '" + path.string() + "'");
  out.precision(17);
  return out;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<double> vector_flag(const std::string& text, const char* flag, std::size_t d) {
  std::vector<double> v;
  try {
    v = parse_vector(text);
  } catch (const ParseError& e) {
    throw UsageError(std::string(flag) + ": " + e.what());
  }
  if (v.size() != d)
    throw UsageError(std::string(flag) + " has " + std::to_string(v.size()) + " entries, expected " + std::to_string(d));
  return v;
}

bool is_section4(const ModelSpec& model) { return model.name == "section4" || model.name == "section4-half"; }

// Options shared by the subcommands.
struct ModelOpts {
  std::string model;
  std::size_t actions = 0;
  std::size_t steps = 400;
};

struct BoundaryOpts {
  std::string problem;
  std::string m0, mT, mu0;
};

struct StrategyOpts {
  std::string file;
  std::string control;
};

void add_model_opts(CLI::App* cmd, ModelOpts& o) {
  cmd->add_option("--model", o.model, "Built-in model name or model file path")->required();
  cmd->add_option("--actions", o.actions, "Action-grid size for built-in interval models (0 = model default)");
  cmd->add_option("--steps", o.steps, "Number of time steps N")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_boundary_opts(CLI::App* cmd, BoundaryOpts& o) {
  cmd->add_option("--problem", o.problem, "Problem file with m0 = ..., mT = ..., mu0 = ... lines");
  cmd->add_option("--m0", o.m0, "Initial distribution, e.g. \"1,0,0\" (overrides the problem file)");
  cmd->add_option("--mT", o.mT, "Target distribution (overrides the problem file)");
  cmd->add_option("--mu0", o.mu0, "Regret weights / initial law of a single player (default uniform)");
}

void add_strategy_opts(CLI::App* cmd, StrategyOpts& o) {
  auto* f = cmd->add_option("--strategy", o.file, "Strategy CSV (state,step,action_index,weight)");
  auto* c = cmd->add_option("--control", o.control, "Named control: section4-utilde, uniform, action:<k>");
  f->excludes(c);
}

ModelSpec load_model(const ModelOpts& o) {
  for (const auto& name : builtin_model_names())
    if (name == o.model) return builtin_model(name, o.actions);
  if (o.actions != 0) throw UsageError("--actions applies to built-in models only");
  if (!std::filesystem::exists(o.model)) throw UsageError("model file '" + o.model + "' does not exist");
  ModelSpec model = parse_model(read_file(o.model));
  if (model.name.empty()) model.name = std::filesystem::path(o.model).stem().string();
  return model;
}

// m0, mT and mu0 from the problem file and flags. Missing m0 (or mT when
// `need_target`) is a usage error, except that the section4 models default
// to their own boundary data.
PlanningProblem load_problem(const ModelSpec& model, const TimeGrid& grid, const BoundaryOpts& o, bool need_target) {
  const std::size_t d = model.d;
  PlanningProblem p;
  p.grid = grid;
  if (!o.problem.empty()) {
    p = parse_problem(read_file(o.problem), grid, d);
  } else if (is_section4(model)) {
    p.m0 = section4::m0();
    p.mT = section4::mT();
  }
  if (!o.m0.empty()) p.m0 = vector_flag(o.m0, "--m0", d);
  if (!o.mT.empty()) p.mT = vector_flag(o.mT, "--mT", d);
  if (!o.mu0.empty()) p.mu0 = vector_flag(o.mu0, "--mu0", d);
  if (p.m0.empty()) throw UsageError("no initial distribution: pass --m0 or --problem");
  if (p.mu0.empty()) p.mu0.assign(d, 1.0 / static_cast<double>(d));
  if (p.mT.empty()) {
    if (need_target) throw UsageError("no target distribution: pass --mT or --problem");
    require_simplex(p.m0, "m0");
    require_simplex(p.mu0, "mu0");
  } else {
    p.validate(d);
  }
  return p;
}

RandomizedStrategy load_strategy(const ModelSpec& model, const TimeGrid& grid, const StrategyOpts& o) {
  const std::size_t d = model.d, K = model.actions.size();
  if (!o.file.empty()) {
    auto in = open_in(o.file);
    return read_strategy_csv(in, grid, d, K);
  }
  if (o.control.empty()) throw UsageError("no strategy: pass --strategy or --control");
  if (o.control == "uniform") return RandomizedStrategy::uniform(grid, d, K);
  if (o.control == "section4-utilde") {
    if (!is_section4(model)) throw UsageError("control section4-utilde needs a section4 model");
    const std::vector<double> cuts{section4::kSwitchTime};
    return RandomizedStrategy::from_control(
        grid, model.actions, d, [](std::size_t i, double t) { return i == 0 ? section4::utilde(t) : 0.0; }, cuts);
  }
  if (o.control.rfind("action:", 0) == 0) {
    std::size_t k = 0;
    try {
      std::size_t used = 0;
      k = std::stoul(o.control.substr(7), &used);
      if (used != o.control.size() - 7) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw UsageError("bad control '" + o.control + "'");
    }
    if (k >= K) throw UsageError("action index " + std::to_string(k) + " out of range (K = " + std::to_string(K) + ")");
    return RandomizedStrategy::dirac(grid, d, K, k);
  }
  throw UsageError("unknown control '" + o.control + "'");
}

DistributionFlow load_flow(const std::string& path, std::size_t d) {
  auto in = open_in(path);
  NodeSeries s = read_flow_csv(in);
  if (s.d != d) throw UsageError("flow file '" + path + "' has " + std::to_string(s.d) + " states, model has " + std::to_string(d));
  DistributionFlow f(s.grid, s.d);
  f.values = std::move(s.values);
  return f;
}

TimeGrid model_grid(const ModelSpec& model, std::size_t steps) { return TimeGrid(model.T, steps); }

std::string fmt_vector(std::span<const double> v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << '(';
  for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? ", " : "") << v[i];
  ss << ')';
  return ss.str();
}

double euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void emit_json(const json& j, const std::string& path) {
  if (!path.empty()) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << '\n';
}

json vec_json(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

// ---------------------------------------------------------------------------

struct SimulateCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  StrategyOpts strategy;
  std::string out;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("simulate", "Integrate the population flow under a strategy; writes a flow CSV");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    add_strategy_opts(cmd, strategy);
    cmd->add_option("--out", out, "Flow CSV path (default: stdout)");
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    const TimeGrid grid = model_grid(m, model.steps);
    const PlanningProblem p = load_problem(m, grid, bounds, false);
    const RandomizedStrategy nu = load_strategy(m, grid, strategy);
    const DistributionFlow flow = forward_nonlinear(m, p.m0, nu);
    if (out.empty()) {
      std::cout.precision(17);
      write_flow_csv(std::cout, flow);
    } else {
      auto os = open_out(out);
      write_flow_csv(os, flow);
    }
    if (!flow.clipped_nodes.empty())
      std::cerr << "warning: clipped small negative components at " << flow.clipped_nodes.size() << " nodes\n";
    std::cout << "m(T) = " << fmt_vector(flow.final(), 6);
    if (!p.mT.empty()) std::cout << "  |m(T) - mT| = " << std::scientific << std::setprecision(3) << euclid(flow.final(), p.mT);
    std::cout << '\n';
  }
};

struct BellmanCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  StrategyOpts strategy;
  std::string flow_file, phiT, out, strategy_out;
  std::size_t brute_steps = 0, brute_actions = 3;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("bellman", "Solve the Bellman equation along a population flow");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    add_strategy_opts(cmd, strategy);
    cmd->add_option("--flow", flow_file, "m flow CSV (otherwise integrated from --m0 under the strategy)");
    cmd->add_option("--phiT", phiT, "Terminal values (default: the model's sigma at m(T))");
    cmd->add_option("--out", out, "Value-flow CSV path");
    cmd->add_option("--strategy-out", strategy_out, "Write the Bellman-optimal (argmax) strategy CSV");
    cmd->add_option("--brute-steps", brute_steps, "Also enumerate pure strategies on this many time blocks (0 = off)");
    cmd->add_option("--brute-actions", brute_actions, "Grid actions used by the enumeration")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    DistributionFlow flow;
    TimeGrid grid;
    std::vector<double> mu0;
    if (!flow_file.empty()) {
      flow = load_flow(flow_file, m.d);
      grid = flow.grid;
      if (std::fabs(grid.T - m.T) > 1e-12 * std::max(1.0, m.T)) throw UsageError("flow horizon differs from the model's T");
      mu0.assign(flow.at(0).begin(), flow.at(0).end());
      if (!bounds.mu0.empty()) mu0 = vector_flag(bounds.mu0, "--mu0", m.d);
    } else {
      grid = model_grid(m, model.steps);
      const PlanningProblem p = load_problem(m, grid, bounds, false);
      flow = forward_nonlinear(m, p.m0, load_strategy(m, grid, strategy));
      mu0 = bounds.mu0.empty() ? p.m0 : p.mu0;
    }
    const std::vector<double> terminal = phiT.empty() ? eval_sigma(m, flow.final()) : vector_flag(phiT, "--phiT", m.d);
    const ValueFlow phi = backward_bellman(m, flow, terminal);
    const RandomizedStrategy best = argmax_strategy(m, flow, phi);
    if (!out.empty()) {
      auto os = open_out(out);
      write_flow_csv(os, phi);
    }
    if (!strategy_out.empty()) {
      auto os = open_out(strategy_out);
      write_strategy_csv(os, best);
    }
    double value = 0.0;
    for (std::size_t i = 0; i < m.d; ++i) value += mu0[i] * phi.at(0)[i];
    json j;
    j["phi0"] = vec_json(phi.at(0));
    j["phiT"] = terminal;
    j["mu0"] = mu0;
    j["value"] = value;
    j["argmax_payoff"] = payoff(m, mu0, best, flow, terminal);
    if (brute_steps > 0) {
      const BruteForceResult bf = brute_force_value(m, mu0, flow, terminal, brute_steps, brute_actions);
      json b = json::parse(report_json(bf));
      b["value_minus_brute_force"] = value - bf.best_payoff;
      j["brute_force"] = b;
    }
    std::cout << j.dump(2) << '\n';
  }
};

struct MfgCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  double damping = 0.5;
  std::size_t iters = 200;
  double tol = 1e-8;
  std::string out;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("mfg", "Damped fixed-point iteration for the classical MFG system");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    cmd->add_option("--damping", damping, "Damping theta in (0, 1]")->capture_default_str();
    cmd->add_option("--iters", iters, "Maximum iterations")->capture_default_str();
    cmd->add_option("--tol", tol, "Convergence tolerance on the sup-norm flow change")->capture_default_str();
    cmd->add_option("--out", out, "Directory for m.csv, phi.csv, strategy.csv and result.json");
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    const TimeGrid grid = model_grid(m, model.steps);
    const PlanningProblem p = load_problem(m, grid, bounds, false);
    const FixedPointResult r = solve_mfg_fixedpoint(m, p.m0, grid, damping, iters, tol);
    json j = json::parse(report_json(r));
    std::string json_path;
    if (!out.empty()) {
      make_dir(out);
      const std::filesystem::path dir(out);
      auto mo = open_out(dir / "m.csv");
      write_flow_csv(mo, r.m_flow);
      auto po = open_out(dir / "phi.csv");
      write_flow_csv(po, r.phi_flow);
      auto so = open_out(dir / "strategy.csv");
      write_strategy_csv(so, r.strategy);
      json_path = (dir / "result.json").string();
    }
    emit_json(j, json_path);
  }
};

struct PlanCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  std::string schedule, settings, out;
  std::size_t starts = 0;
  std::uint64_t seed = 0;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("plan", "Minimal-regret sequence over an alpha schedule");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    cmd->add_option("--schedule", schedule, "Strictly increasing radii, e.g. \"1,2,4\" (default 1,2,4,8,16,32)");
    cmd->add_option("--settings", settings, "Optimizer settings file (key = value lines)");
    cmd->add_option("--starts", starts, "Starts per radius (overrides the settings file)");
    cmd->add_option("--seed", seed, "Seed for the random starts")->capture_default_str();
    cmd->add_option("--out", out, "Directory for results.json and per-radius flow/strategy CSVs");
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    const TimeGrid grid = model_grid(m, model.steps);
    const PlanningProblem p = load_problem(m, grid, bounds, true);
    const AlphaSchedule sched = schedule.empty() ? AlphaSchedule::standard() : AlphaSchedule::parse(schedule);
    OptimizerSettings opts = settings.empty() ? OptimizerSettings{} : OptimizerSettings::parse(read_file(settings));
    if (starts > 0) opts.n_starts = starts;
    opts.seed = seed;
    const SequenceResult seq = minimal_regret_sequence(m, p, sched, opts);
    json j = json::parse(sequence_json(seq));
    std::string json_path;
    if (!out.empty()) {
      make_dir(out);
      const std::filesystem::path dir(out);
      for (std::size_t k = 0; k < seq.results.size(); ++k) {
        const RegretResult& r = seq.results[k];
        const std::string tag = "_" + std::to_string(k) + ".csv";
        auto mo = open_out(dir / ("m" + tag));
        write_flow_csv(mo, r.m_flow);
        auto uo = open_out(dir / ("mu" + tag));
        write_flow_csv(uo, r.mu_flow);
        auto po = open_out(dir / ("phi" + tag));
        write_flow_csv(po, r.phi_flow);
        auto so = open_out(dir / ("strategy" + tag));
        write_strategy_csv(so, r.decision.strategy);
      }
      json_path = (dir / "results.json").string();
    }
    emit_json(j, json_path);
  }
};

struct CheckCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  StrategyOpts strategy;
  std::string phiT, box_lo, box_hi;
  double tol = 1e-6;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("check", "Certify a candidate decision and test the model's structure");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    add_strategy_opts(cmd, strategy);
    cmd->add_option("--phiT", phiT, "Candidate terminal values (default 0)");
    cmd->add_option("--tol", tol, "ArgMax and terminal tolerance")->capture_default_str();
    cmd->add_option("--samples", samples, "Samples for the monotonicity and concavity tests")->capture_default_str();
    cmd->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    cmd->add_option("--box-lo", box_lo, "Lower corner of the concavity box (default -2 in every coordinate)");
    cmd->add_option("--box-hi", box_hi, "Upper corner of the concavity box (default 2 in every coordinate)");
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    const TimeGrid grid = model_grid(m, model.steps);
    // Top level: one verdict per test; full reports under "reports".
    json j, reports;
    auto skip = [&](const char* key, const char* reason) {
      j[key] = "skipped";
      reports[key] = {{"reason", reason}};
    };
    const bool have_candidate = !strategy.file.empty() || !strategy.control.empty();
    if (have_candidate) {
      const PlanningProblem p = load_problem(m, grid, bounds, true);
      Decision dec{load_strategy(m, grid, strategy), phiT.empty() ? std::vector<double>(m.d, 0.0) : vector_flag(phiT, "--phiT", m.d)};
      const ClassicalReport r = check_classical(m, dec, p, tol);
      j["classical"] = r.pass ? "pass" : "fail";
      reports["classical"] = json::parse(report_json(r));
    } else {
      skip("classical", "no candidate strategy given");
    }
    if (m.split) {
      const MonotonicityReport r = monotonicity_check(m, samples, seed);
      j["monotonicity"] = verdict_name(r.verdict);
      reports["monotonicity"] = json::parse(report_json(r));
    } else {
      skip("monotonicity", "payoff not declared in split form");
    }
    if (m.q_uses_m() || (!m.split && m.g_uses_m())) {
      skip("concavity", "generator or action payoff depends on m");
    } else {
      const std::vector<double> lo = box_lo.empty() ? std::vector<double>(m.d, -2.0) : vector_flag(box_lo, "--box-lo", m.d);
      const std::vector<double> hi = box_hi.empty() ? std::vector<double>(m.d, 2.0) : vector_flag(box_hi, "--box-hi", m.d);
      const ConcavityReport r = concavity_check(m, lo, hi, samples, seed);
      j["concavity"] = verdict_name(r.verdict);
      reports["concavity"] = json::parse(report_json(r));
    }
    j["reports"] = reports;
    std::cout << j.dump(2) << '\n';
  }
};

struct MonteCarloCmd {
  ModelOpts model;
  BoundaryOpts bounds;
  StrategyOpts strategy;
  std::string flow_file, paths_out;
  std::size_t paths = 100000, dump = 0;
  std::uint64_t seed = 0;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("montecarlo", "Simulate the Markov chain and compare with the Kolmogorov flow");
    add_model_opts(cmd, model);
    add_boundary_opts(cmd, bounds);
    add_strategy_opts(cmd, strategy);
    cmd->add_option("--flow", flow_file, "m flow CSV (otherwise integrated from --m0 under the strategy)");
    cmd->add_option("--paths", paths, "Number of simulated paths")->capture_default_str();
    cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    cmd->add_option("--dump", dump, "Write the first N paths to --paths-out");
    cmd->add_option("--paths-out", paths_out, "CSV of dumped paths");
    cmd->callback([this] { run(); });
  }

  void run() {
    if (paths == 0) throw UsageError("--paths must be positive");
    if (dump > 0 && paths_out.empty()) throw UsageError("--dump needs --paths-out");
    apply_workers();
    const ModelSpec m = load_model(model);
    DistributionFlow flow;
    std::vector<double> mu0;
    RandomizedStrategy nu;
    if (!flow_file.empty()) {
      flow = load_flow(flow_file, m.d);
      nu = load_strategy(m, flow.grid, strategy);
      mu0.assign(flow.at(0).begin(), flow.at(0).end());
      if (!bounds.mu0.empty()) mu0 = vector_flag(bounds.mu0, "--mu0", m.d);
    } else {
      const TimeGrid grid = model_grid(m, model.steps);
      const PlanningProblem p = load_problem(m, grid, bounds, false);
      nu = load_strategy(m, grid, strategy);
      flow = forward_nonlinear(m, p.m0, nu);
      mu0 = bounds.mu0.empty() ? p.m0 : p.mu0;
    }
    const DistributionFlow ref = forward_linear(m, mu0, flow, nu);
    const std::vector<double> sigma = m.sigma ? eval_sigma(m, flow.final()) : std::vector<double>{};
    ChainOptions copts;
    copts.dump_paths = dump;
    const ChainResult mc = simulate_paths(m, flow, nu, mu0, paths, seed, sigma, copts);

    const double n = static_cast<double>(paths);
    auto zscore = [n](double emp, double p) {
      const double var = p * (1.0 - p) / n;
      if (var <= 0.0) return emp == p ? 0.0 : std::numeric_limits<double>::infinity();
      return (emp - p) / std::sqrt(var);
    };
    std::vector<double> z_final(m.d);
    double z_max = 0.0;
    std::size_t z_node = 0;
    for (std::size_t k = 0; k <= flow.grid.N; ++k)
      for (std::size_t i = 0; i < m.d; ++i) {
        const double z = zscore(mc.empirical.at(k)[i], ref.at(k)[i]);
        if (k == flow.grid.N) z_final[i] = z;
        if (std::fabs(z) > z_max) {
          z_max = std::fabs(z);
          z_node = k;
        }
      }
    json j;
    j["paths"] = paths;
    j["seed"] = seed;
    j["empirical_final"] = vec_json(mc.empirical.final());
    j["ode_final"] = vec_json(ref.final());
    j["z_final"] = z_final;
    j["z_max_abs"] = z_max;
    j["z_max_time"] = flow.grid.t(z_node);
    j["nodes"] = flow.grid.N + 1;
    j["real_jumps"] = mc.real_jumps;
    j["virtual_jumps"] = mc.virtual_jumps;
    j["bound_violations"] = mc.bound_violations;
    if (!sigma.empty()) {
      const double exact = payoff(m, mu0, nu, flow, sigma);
      j["payoff_mean"] = mc.payoff_mean;
      j["payoff_se"] = mc.payoff_se;
      j["payoff_ode"] = exact;
      j["payoff_z"] = mc.payoff_se > 0.0 ? (mc.payoff_mean - exact) / mc.payoff_se : 0.0;
    }
    if (!paths_out.empty()) {
      auto os = open_out(paths_out);
      write_paths_csv(os, mc.dumped);
    }
    std::cout << j.dump(2) << '\n';
  }
};

struct ValidateCmd {
  ModelOpts model;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  bool print = false;

  void setup(CLI::App& app) {
    auto* cmd = app.add_subcommand("validate", "Check a model's generator on random (t, m, u) samples");
    cmd->add_option("--model", model.model, "Built-in model name or model file path")->required();
    cmd->add_option("--actions", model.actions, "Action-grid size for built-in interval models (0 = model default)");
    cmd->add_option("--samples", samples, "Number of samples")->capture_default_str();
    cmd->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    cmd->add_flag("--print", print, "Print the model in canonical text form instead of validating");
    cmd->callback([this] { run(); });
  }

  void run() {
    apply_workers();
    const ModelSpec m = load_model(model);
    if (print) {
      std::cout << serialize_model(m);
      return;
    }
    const ValidationReport r = validate_model(m, samples, seed);
    json j;
    j["model"] = m.name;
    j["d"] = m.d;
    j["K"] = m.actions.size();
    j["samples"] = r.n_samples;
    j["kolmogorov_ok"] = r.kolmogorov_ok;
    j["max_row_sum_deviation"] = r.max_row_sum_deviation;
    j["min_off_diagonal"] = r.min_off_diagonal;
    j["violations"] = r.violations;
    j["lipschitz_m"] = r.lipschitz_m;
    j["lipschitz_m_coarse"] = r.lipschitz_m_coarse;
    j["discontinuity_suspected"] = r.discontinuity_suspected;
    std::cout << j.dump(2) << '\n';
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planning problems for finite-state mean field games"};
  app.require_subcommand(1);
  std::string names;
  for (const auto& n : builtin_model_names()) names += (names.empty() ? "" : ", ") + n;
  app.footer("Built-in models: " + names + "\nExit codes: 0 success, 1 numerical failure, 2 usage or input error.");
  app.fallthrough();
  app.add_option("--workers", g_workers, "Worker threads for parallel kernels (0 = all cores)")->check(CLI::NonNegativeNumber);

  SimulateCmd simulate;
  BellmanCmd bellman;
  MfgCmd mfg;
  PlanCmd plan;
  CheckCmd check;
  MonteCarloCmd montecarlo;
  ValidateCmd validate;
  simulate.setup(app);
  bellman.setup(app);
  mfg.setup(app);
  plan.setup(app);
  check.setup(app);
  montecarlo.setup(app);
  validate.setup(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const KolmogorovError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
