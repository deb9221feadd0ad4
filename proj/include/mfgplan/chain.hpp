#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mfgplan/dynamics.hpp"
#include "mfgplan/model.hpp"

namespace mfgplan {

/// One simulated trajectory. States are 0-based; states[0] is the initial
/// state and states[k] the state entered at jump_times[k-1].
struct PathSample {
  std::vector<double> jump_times;
  std::vector<std::size_t> states;
  double payoff = 0.0;
};

struct ChainResult {
  std::size_t n_paths = 0;
  DistributionFlow empirical;             // fraction of paths in each state at each node
  std::vector<std::uint64_t> counts;      // [(n*d) + i]
  double payoff_mean = 0.0;
  double payoff_se = 0.0;
  std::uint64_t virtual_jumps = 0;
  std::uint64_t real_jumps = 0;
  std::uint64_t bound_violations = 0;     // proposals whose exit rate exceeded the dominating rate
  std::vector<double> dominating_rate;    // per step
  std::vector<PathSample> dumped;         // first `dump_paths` paths
};

struct ChainOptions {
  std::size_t dump_paths = 0;
};

/// Simulates n_paths trajectories of the chain with generator
/// Q(t, m(t), nu(t)) by uniformisation, one RNG stream per path derived
/// from (seed, path index). Path payoff: sigma[X(T)] (when sigma is
/// nonempty) plus the integral of the action-averaged running payoff.
/// Output does not depend on the thread count.
ChainResult simulate_paths(const ModelSpec& model, const DistributionFlow& m_flow, const RandomizedStrategy& nu,
                           std::span<const double> mu0, std::size_t n_paths, std::uint64_t seed,
                           std::span<const double> sigma = {}, const ChainOptions& options = {});

/// Single-threaded reference implementation of simulate_paths.
ChainResult simulate_paths_serial(const ModelSpec& model, const DistributionFlow& m_flow, const RandomizedStrategy& nu,
                                  std::span<const double> mu0, std::size_t n_paths, std::uint64_t seed,
                                  std::span<const double> sigma = {}, const ChainOptions& options = {});

/// CSV of (path, jump_time, state) with 1-based states; time 0 rows give the initial state.
void write_paths_csv(std::ostream& os, const std::vector<PathSample>& paths);

}  // namespace mfgplan
