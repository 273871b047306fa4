#pragma once

// Choice models for the compensate-or-relax reaching task: the subjective
// payoff table, Prelec probability weighting, the CPT utility difference with
// its softmax choice rule, and the logistic (BLR) curve.

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace cptchoice {

enum class HumanAction { HA1 = 0, HA2 = 1 };  // relax, compensate
enum class RobotAction { RA1 = 0, RA2 = 1 };  // assist, perturb

std::string_view to_string(HumanAction h);
std::string_view to_string(RobotAction r);
HumanAction parse_human_action(std::string_view s);
RobotAction parse_robot_action(std::string_view s);

struct PayoffSpec {
  double V = 1.0;  // reward for a completed reach
  double G = 1.0;  // loss magnitude for a failed reach
  double C = 0.0;  // effort cost of compensating

  void validate() const;
};

struct CptBounds {
  std::array<double, 4> lower{0.5, 0.5, 0.01, 1.0};
  std::array<double, 4> upper{3.0, 5.0, 5.0, 30.0};
};

struct CptParams {
  double alpha = 1.0;   // curvature of the weighting function
  double beta = 1.0;    // elevation of the weighting function
  double C = 1.0;       // effort cost
  double lambda = 1.0;  // choice determinism

  std::array<double, 4> to_array() const { return {alpha, beta, C, lambda}; }
  static CptParams from_array(const std::array<double, 4>& v) {
    return {v[0], v[1], v[2], v[3]};
  }
  bool within(const CptBounds& bounds) const;
  friend bool operator==(const CptParams&, const CptParams&) = default;
};

struct BlrParams {
  double beta0 = 0.0;  // intercept (log-odds)
  double beta1 = 0.0;  // slope per unit perturbation probability
  friend bool operator==(const BlrParams&, const BlrParams&) = default;
};

inline constexpr double kBlrInterceptCap = 10.0;

/// Throws std::domain_error unless 0 <= p <= 1.
double checked_probability(double p);

/// Table of subjective outcome values: V for (HA1,RA1), -G for (HA1,RA2),
/// V - C whenever the human compensates.
double subjective_value(HumanAction h, RobotAction r, const PayoffSpec& payoff);

/// Prelec weighting exp(-beta * (-ln p)^alpha), with the limits 0 and 1 at
/// the endpoints.
double prelec_weight(double p, double alpha, double beta);

/// Utility difference U(HA2) - U(HA1) with HA2 treated as a certain outcome:
/// -C + (G + V) * w(pR). The effort cost comes from `params`; V and G from
/// `payoff` (its C field is ignored).
double delta_utility(double p_r, const CptParams& params, const PayoffSpec& payoff = {});

/// P(HA2) = sigmoid(lambda * delta_utility).
double cpt_choice_prob(double p_r, const CptParams& params, const PayoffSpec& payoff = {});

/// Utility of an action with both robot outcomes weighted, w(1 - pR) for RA1
/// and w(pR) for RA2. Kept for comparison; fitting uses delta_utility.
double cpt_utility_weighted(HumanAction h, double p_r, const CptParams& params,
                            const PayoffSpec& payoff = {});

/// Overflow-safe softmax over lambda * utilities.
std::vector<double> softmax_choice(std::span<const double> utilities, double lambda);

double blr_choice_prob(double p_r, const BlrParams& params);

double sigmoid(double z);
/// log(sigmoid(z)) without cancellation.
double log_sigmoid(double z);

}  // namespace cptchoice
