#include "cptchoice/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cptchoice {

std::string_view to_string(Cluster c) {
  return c == Cluster::AlwaysCompensate ? "AlwaysCompensate" : "TradeOff";
}

std::string ClusterRule::describe() const {
  std::ostringstream out;
  out << "AlwaysCompensate iff fitted C <= " << max_cost << " or min empirical P2 >= " << min_p2
      << "; otherwise TradeOff";
  return out.str();
}

double compensation_probability(std::span<const TrialRecord> block_trials) {
  if (block_trials.empty()) throw std::invalid_argument("compensation probability of an empty block");
  const auto ha2 = std::count_if(block_trials.begin(), block_trials.end(),
                                 [](const TrialRecord& t) { return t.human_action == HumanAction::HA2; });
  return static_cast<double>(ha2) / static_cast<double>(block_trials.size());
}

ChoiceDataset build_choice_dataset(const SessionLog& log) {
  std::map<std::pair<int, double>, LevelCounts> counts;
  for (const auto& t : log.trials) {
    auto& c = counts[{t.round, t.p_r}];
    c.p_r = t.p_r;
    c.round = t.round;
    (t.human_action == HumanAction::HA2 ? c.n2 : c.n1) += 1;
  }
  ChoiceDataset data;
  for (auto& [key, c] : counts) data.levels.push_back(c);
  return data;
}

std::vector<EmpiricalPoint> empirical_points(const ChoiceDataset& data) {
  std::vector<EmpiricalPoint> out;
  for (const auto& l : data.levels) {
    if (l.total() == 0) continue;
    out.push_back({l.round.value_or(0), l.p_r, l.total(), l.empirical_p2()});
  }
  return out;
}

Cluster classify_participant(const ParticipantSummary& summary, const ClusterRule& rule) {
  if (summary.cpt_fit.params.C <= rule.max_cost) return Cluster::AlwaysCompensate;
  if (!summary.empirical.empty()) {
    const auto lowest = std::min_element(summary.empirical.begin(), summary.empirical.end(),
                                         [](const auto& a, const auto& b) { return a.p2 < b.p2; });
    if (lowest->p2 >= rule.min_p2) return Cluster::AlwaysCompensate;
  }
  return Cluster::TradeOff;
}

std::vector<ParticipantSummary> cluster_participants(std::vector<ParticipantSummary> summaries,
                                                     const ClusterRule& rule) {
  for (auto& s : summaries) s.cluster = classify_participant(s, rule);
  return summaries;
}

std::vector<double> uniform_grid(std::size_t points) {
  if (points < 2) throw std::invalid_argument("grid needs at least two points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

RecoveryReport recovery_report(const CptParams& truth, const FitResult& fit, std::span<const double> grid,
                               const PayoffSpec& payoff) {
  RecoveryReport report;
  const auto t = truth.to_array();
  const auto f = fit.params.to_array();
  for (std::size_t i = 0; i < 4; ++i) report.abs_error[i] = std::abs(f[i] - t[i]);
  for (double p : grid) {
    const double diff = std::abs(cpt_choice_prob(p, fit.params, payoff) - cpt_choice_prob(p, truth, payoff));
    report.curve_max_error = std::max(report.curve_max_error, diff);
  }
  report.identifiable = fit.identifiable;
  return report;
}

std::vector<CurvePoint> curve_export(const ModelParams& params, std::span<const double> grid,
                                     const PayoffSpec& payoff) {
  std::vector<CurvePoint> out;
  out.reserve(grid.size());
  for (double p : grid) {
    checked_probability(p);
    const double p2 = std::holds_alternative<CptParams>(params)
                          ? cpt_choice_prob(p, std::get<CptParams>(params), payoff)
                          : blr_choice_prob(p, std::get<BlrParams>(params));
    out.push_back({p, p2});
  }
  return out;
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "p_r,p2\n";
  char line[64];
  for (const auto& pt : curve) {
    std::snprintf(line, sizeof line, "%.6g,%.17g\n", pt.p_r, pt.p2);
    out += line;
  }
  return out;
}

ParticipantSummary summarize_participant(const SessionLog& log, const SummaryOptions& options) {
  if (log.trials.empty()) throw std::invalid_argument("no trials for participant '" + log.participant_id + "'");
  ParticipantSummary s;
  s.participant_id = log.participant_id;
  const ChoiceDataset data = build_choice_dataset(log);
  s.empirical = empirical_points(data);
  s.cpt_fit = fit_cpt(data, options.cpt);
  s.blr_map = blr_map(data, options.blr);
  const BlrParams map = s.blr_map;
  s.blr_rmse = rmse(data, [&](double p) { return blr_choice_prob(p, map); }, options.cpt.rmse);
  if (options.posterior) s.blr_posterior = blr_posterior(data, *options.posterior);
  s.cluster = classify_participant(s, options.cluster);
  return s;
}

}  // namespace cptchoice
