#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cptchoice/estimation.hpp"
#include "cptchoice/protocol.hpp"

namespace cptchoice {

enum class Cluster { AlwaysCompensate, TradeOff };
std::string_view to_string(Cluster c);

/// Operational rule separating the two behavioral groups.
struct ClusterRule {
  double max_cost = 0.5;     // fitted C at or below this: always-compensate
  double min_p2 = 0.9;       // or every empirical P2 at or above this
  std::string describe() const;
};

struct EmpiricalPoint {
  int round = 0;
  double p_r = 0.0;
  std::int64_t trials = 0;
  double p2 = 0.0;
};

struct ParticipantSummary {
  std::string participant_id;
  std::vector<EmpiricalPoint> empirical;  // per (round, level)
  FitResult cpt_fit;
  BlrParams blr_map;
  double blr_rmse = 0.0;
  std::optional<PosteriorSummary> blr_posterior;
  std::optional<Cluster> cluster;
};

/// Fraction of HA2 trials in a block (failed trials included).
double compensation_probability(std::span<const TrialRecord> block_trials);

/// Counts per (round, level); round tags kept for RMSE, fitting pools them.
ChoiceDataset build_choice_dataset(const SessionLog& log);

std::vector<EmpiricalPoint> empirical_points(const ChoiceDataset& data);

Cluster classify_participant(const ParticipantSummary& summary, const ClusterRule& rule = {});

/// Assigns `cluster` on every summary.
std::vector<ParticipantSummary> cluster_participants(std::vector<ParticipantSummary> summaries,
                                                     const ClusterRule& rule = {});

struct RecoveryReport {
  std::array<double, 4> abs_error{};  // |fitted - true| for alpha, beta, C, lambda
  double curve_max_error = 0.0;
  bool identifiable = true;
};

std::vector<double> uniform_grid(std::size_t points = 101);

RecoveryReport recovery_report(const CptParams& truth, const FitResult& fit,
                               std::span<const double> grid, const PayoffSpec& payoff = {});

struct CurvePoint {
  double p_r = 0.0;
  double p2 = 0.0;
};

using ModelParams = std::variant<CptParams, BlrParams>;

std::vector<CurvePoint> curve_export(const ModelParams& params, std::span<const double> grid,
                                     const PayoffSpec& payoff = {});

/// CSV with header "p_r,p2".
std::string curve_csv(std::span<const CurvePoint> curve);

struct SummaryOptions {
  CptFitConfig cpt;
  BlrPrior blr;
  std::optional<PosteriorConfig> posterior;  // skipped when empty
  ClusterRule cluster;
};

/// Fits both models to one participant's log and assigns the cluster.
ParticipantSummary summarize_participant(const SessionLog& log, const SummaryOptions& options = {});

}  // namespace cptchoice
