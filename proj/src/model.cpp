#include "cptchoice/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cptchoice {

std::string_view to_string(HumanAction h) { return h == HumanAction::HA1 ? "HA1" : "HA2"; }

std::string_view to_string(RobotAction r) { return r == RobotAction::RA1 ? "RA1" : "RA2"; }

HumanAction parse_human_action(std::string_view s) {
  if (s == "HA1") return HumanAction::HA1;
  if (s == "HA2") return HumanAction::HA2;
  throw std::invalid_argument("unknown human action '" + std::string(s) + "'");
}

RobotAction parse_robot_action(std::string_view s) {
  if (s == "RA1") return RobotAction::RA1;
  if (s == "RA2") return RobotAction::RA2;
  throw std::invalid_argument("unknown robot action '" + std::string(s) + "'");
}

void PayoffSpec::validate() const {
  if (!(V > 0.0) || !(G > 0.0) || !(C >= 0.0)) {
    throw std::invalid_argument("payoff requires V > 0, G > 0, C >= 0");
  }
}

bool CptParams::within(const CptBounds& bounds) const {
  const auto v = to_array();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= bounds.lower[i] && v[i] <= bounds.upper[i])) return false;
  }
  return true;
}

double checked_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("probability outside [0, 1]: " + std::to_string(p));
  }
  return p;
}

double subjective_value(HumanAction h, RobotAction r, const PayoffSpec& payoff) {
  if (h == HumanAction::HA2) return payoff.V - payoff.C;
  return r == RobotAction::RA1 ? payoff.V : -payoff.G;
}

double prelec_weight(double p, double alpha, double beta) {
  checked_probability(p);
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw std::domain_error("Prelec weighting requires alpha > 0 and beta > 0");
  }
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  return std::exp(-beta * std::pow(-std::log(p), alpha));
}

double delta_utility(double p_r, const CptParams& params, const PayoffSpec& payoff) {
  return -params.C + (payoff.G + payoff.V) * prelec_weight(p_r, params.alpha, params.beta);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double cpt_choice_prob(double p_r, const CptParams& params, const PayoffSpec& payoff) {
  return sigmoid(params.lambda * delta_utility(p_r, params, payoff));
}

double cpt_utility_weighted(HumanAction h, double p_r, const CptParams& params,
                            const PayoffSpec& payoff) {
  PayoffSpec values = payoff;
  values.C = params.C;
  const double w_perturb = prelec_weight(p_r, params.alpha, params.beta);
  const double w_assist = prelec_weight(1.0 - p_r, params.alpha, params.beta);
  return subjective_value(h, RobotAction::RA1, values) * w_assist +
         subjective_value(h, RobotAction::RA2, values) * w_perturb;
}

std::vector<double> softmax_choice(std::span<const double> utilities, double lambda) {
  if (utilities.empty()) throw std::invalid_argument("softmax over an empty action set");
  if (!(lambda > 0.0)) throw std::domain_error("softmax requires lambda > 0");
  const double top = *std::max_element(utilities.begin(), utilities.end());
  std::vector<double> out(utilities.size());
  double total = 0.0;
  for (std::size_t i = 0; i < utilities.size(); ++i) {
    if (!std::isfinite(utilities[i])) throw std::domain_error("softmax utility is not finite");
    out[i] = std::exp(lambda * (utilities[i] - top));
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double blr_choice_prob(double p_r, const BlrParams& params) {
  return sigmoid(params.beta0 + params.beta1 * p_r);
}

}  // namespace cptchoice
