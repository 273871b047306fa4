#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cptchoice/hmc.hpp"
#include "cptchoice/model.hpp"
#include "cptchoice/optimize.hpp"

namespace cptchoice {

/// HA1/HA2 counts observed at one perturbation level, optionally tagged with
/// the round they came from.
struct LevelCounts {
  double p_r = 0.0;
  std::int64_t n1 = 0;  // relax
  std::int64_t n2 = 0;  // compensate
  std::optional<int> round;

  std::int64_t total() const { return n1 + n2; }
  double empirical_p2() const { return total() > 0 ? static_cast<double>(n2) / static_cast<double>(total()) : 0.0; }
};

struct ChoiceDataset {
  std::vector<LevelCounts> levels;

  /// Throws std::invalid_argument on negative counts, probabilities outside
  /// [0, 1], or a level repeated within one round.
  void validate() const;
  bool empty() const;
  std::int64_t total_trials() const;
  std::size_t distinct_levels() const;
  /// One entry per distinct level with rounds merged (round tag dropped).
  ChoiceDataset pooled() const;
};

// ---------------------------------------------------------------------------
// CPT-softmax likelihood

inline constexpr double kProbabilityClamp = 1e-12;

/// Negative log-likelihood of the counts under the CPT-softmax model.
double nll(const ChoiceDataset& data, const CptParams& params, const PayoffSpec& payoff = {});

/// Gradient of nll with respect to (alpha, beta, C, lambda).
std::array<double, 4> nll_gradient(const ChoiceDataset& data, const CptParams& params,
                                   const PayoffSpec& payoff = {});

struct RmseOptions {
  bool pooled = false;  // one point per level instead of one per (round, level)
};

struct LocalOptimum {
  CptParams params;
  double nll = 0.0;
};

struct CptFitConfig {
  int starts = 16;
  std::uint64_t seed = 0;
  CptBounds bounds;
  PayoffSpec payoff;
  double optimum_nll_tol = 1e-6;      // optima this close to the best are reported
  double identifiability_tol = 0.5;   // (alpha, beta) spread that flags non-identifiability
  BoxMinimizeOptions minimizer;
  RmseOptions rmse;  // point set for FitResult::rmse
};

struct FitResult {
  CptParams params;
  double nll = 0.0;
  double rmse = 0.0;
  int restarts = 0;
  std::vector<LocalOptimum> local_optima;  // best first
  bool converged = false;
  bool identifiable = true;
  double projected_gradient_norm = 0.0;
  bool ridge_tie_break = false;  // C moved to its lower bound along a flat ridge
};

FitResult fit_cpt(const ChoiceDataset& data, const CptFitConfig& config = {});

// ---------------------------------------------------------------------------
// Bayesian logistic regression

struct BlrPrior {
  double sd = 5.0;
  double cap = kBlrInterceptCap;
};

/// Log posterior (up to a constant) of the logistic curve with independent
/// zero-mean Gaussian priors; writes the gradient if `grad` is non-null.
double blr_log_posterior(const ChoiceDataset& data, const BlrParams& params, double prior_sd,
                         std::array<double, 2>* grad = nullptr);

/// True when the unpenalized likelihood has no maximizer and is increased
/// without limit by pushing the intercept up: there is at least one HA2
/// choice and every HA2 choice sits at a level no higher than every HA1
/// choice, with the data spread over more than one level.
bool intercept_unbounded(const ChoiceDataset& data);

/// Unconstrained posterior mode (no intercept cap).
BlrParams blr_posterior_mode(const ChoiceDataset& data, double prior_sd = 5.0);

/// MAP estimate with the intercept capped: when the mode exceeds the cap, or
/// the data push the intercept to infinity, beta0 is fixed at the cap and
/// beta1 re-optimized there.
BlrParams blr_map(const ChoiceDataset& data, const BlrPrior& prior = {});

struct PosteriorConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  std::uint64_t seed = 0;
  double prior_sd = 5.0;
  double max_rhat = 1.05;
  double min_ess = 400.0;
  bool parallel = true;
};

struct PosteriorSummary {
  BlrParams mean;
  std::array<double, 2> sd{};
  std::array<double, 2> ci95_width{};
  std::array<double, 2> r_hat{};
  std::array<double, 2> ess{};
  int chains = 0;
  int draws_per_chain = 0;
  int divergences = 0;
  bool diagnostics_passed = false;
  std::string sampler = "nuts";
};

/// Runs `config.chains` NUTS chains on an arbitrary 2-D log density and
/// summarizes the draws. blr_posterior is this applied to the BLR posterior.
PosteriorSummary summarize_nuts(const hmc::LogDensity& density, const std::array<double, 2>& init,
                                const PosteriorConfig& config);

PosteriorSummary blr_posterior(const ChoiceDataset& data, const PosteriorConfig& config = {});

// ---------------------------------------------------------------------------

/// Root mean squared difference between block-level empirical P2 and `curve`.
double rmse(const ChoiceDataset& data, const std::function<double(double)>& curve,
            const RmseOptions& options = {});

/// Linear-interpolated sample quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

}  // namespace cptchoice
