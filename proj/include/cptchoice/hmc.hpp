#pragma once

// No-U-Turn Hamiltonian Monte Carlo with dual-averaging step-size
// adaptation and windowed diagonal mass-matrix adaptation, plus the usual
// convergence diagnostics (split R-hat, effective sample size).

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cptchoice::hmc {

/// Log density (up to a constant); writes d/dx log p into `grad`.
using LogDensity = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct NutsConfig {
  int warmup = 1000;
  int samples = 1000;
  int max_depth = 10;
  double target_accept = 0.8;
  bool adapt_mass = true;
};

struct ChainResult {
  std::vector<std::vector<double>> draws;  // samples x dim
  double step_size = 0.0;
  std::vector<double> inverse_mass;
  double mean_accept = 0.0;  // post-warmup mean acceptance statistic
  int divergences = 0;       // post-warmup
};

ChainResult run_nuts_chain(const LogDensity& log_density, std::vector<double> init,
                           const NutsConfig& config, std::uint64_t seed);

/// Split R-hat of one scalar quantity given per-chain draw sequences.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Multi-chain effective sample size (Geyer initial monotone sequence).
double effective_sample_size(const std::vector<std::vector<double>>& chains);

/// Extracts component `index` of every draw in every chain.
std::vector<std::vector<double>> component(const std::vector<ChainResult>& chains, std::size_t index);

}  // namespace cptchoice::hmc
