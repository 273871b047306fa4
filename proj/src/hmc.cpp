#include "cptchoice/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cptchoice/random.hpp"

namespace cptchoice::hmc {
namespace {

constexpr double kMaxEnergyError = 1000.0;

struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;
  double logp = 0.0;
};

class Integrator {
 public:
  Integrator(const LogDensity& density, const std::vector<double>& inverse_mass)
      : density_(density), inv_mass_(inverse_mass) {}

  void evaluate(PhasePoint& z) const { z.logp = density_(z.q, z.grad); }

  void leapfrog(PhasePoint& z, double eps) const {
    const std::size_t n = z.q.size();
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < n; ++i) z.q[i] += eps * inv_mass_[i] * z.p[i];
    evaluate(z);
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

  double joint(const PhasePoint& z) const {
    double kinetic = 0.0;
    for (std::size_t i = 0; i < z.p.size(); ++i) kinetic += inv_mass_[i] * z.p[i] * z.p[i];
    const double h = z.logp - 0.5 * kinetic;
    return std::isfinite(h) ? h : -std::numeric_limits<double>::infinity();
  }

  void draw_momentum(PhasePoint& z, Rng& rng) const {
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = rng.normal() / std::sqrt(inv_mass_[i]);
  }

  // True while the trajectory between the two ends is still expanding.
  bool no_uturn(const PhasePoint& minus, const PhasePoint& plus) const {
    double dot_minus = 0.0, dot_plus = 0.0;
    for (std::size_t i = 0; i < minus.q.size(); ++i) {
      const double dq = plus.q[i] - minus.q[i];
      dot_minus += dq * inv_mass_[i] * minus.p[i];
      dot_plus += dq * inv_mass_[i] * plus.p[i];
    }
    return dot_minus >= 0.0 && dot_plus >= 0.0;
  }

 private:
  const LogDensity& density_;
  const std::vector<double>& inv_mass_;
};

struct Subtree {
  PhasePoint minus;
  PhasePoint plus;
  PhasePoint proposal;
  double n_valid = 0.0;
  bool ok = true;
  bool divergent = false;
  double sum_accept = 0.0;
  int n_steps = 0;
};

Subtree build_tree(const Integrator& integ, const PhasePoint& start, double log_u, int direction,
                   int depth, double eps, double h0, Rng& rng) {
  if (depth == 0) {
    PhasePoint z = start;
    integ.leapfrog(z, direction * eps);
    const double h = integ.joint(z);
    Subtree t;
    t.n_valid = log_u <= h ? 1.0 : 0.0;
    t.ok = log_u < h + kMaxEnergyError;
    t.divergent = !t.ok;
    t.sum_accept = std::isfinite(h) ? std::min(1.0, std::exp(h - h0)) : 0.0;
    t.n_steps = 1;
    t.minus = z;
    t.plus = z;
    t.proposal = std::move(z);
    return t;
  }
  Subtree t = build_tree(integ, start, log_u, direction, depth - 1, eps, h0, rng);
  if (!t.ok) return t;
  Subtree other = build_tree(integ, direction < 0 ? t.minus : t.plus, log_u, direction, depth - 1,
                             eps, h0, rng);
  if (direction < 0) {
    t.minus = std::move(other.minus);
  } else {
    t.plus = std::move(other.plus);
  }
  const double total = t.n_valid + other.n_valid;
  if (total > 0.0 && rng.uniform() < other.n_valid / total) t.proposal = std::move(other.proposal);
  t.sum_accept += other.sum_accept;
  t.n_steps += other.n_steps;
  t.divergent = other.divergent;
  t.ok = other.ok && integ.no_uturn(t.minus, t.plus);
  t.n_valid = total;
  return t;
}

struct Transition {
  double accept = 0.0;
  bool divergent = false;
};

Transition nuts_transition(const Integrator& integ, PhasePoint& current, double eps, int max_depth,
                           Rng& rng) {
  integ.draw_momentum(current, rng);
  const double h0 = integ.joint(current);
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  const double log_u = h0 + std::log(u);

  PhasePoint minus = current;
  PhasePoint plus = current;
  PhasePoint proposal = current;
  double n_valid = 1.0;
  double sum_accept = 0.0;
  int n_steps = 0;
  bool divergent = false;

  for (int depth = 0; depth < max_depth; ++depth) {
    const int direction = rng.uniform() < 0.5 ? -1 : 1;
    Subtree t = build_tree(integ, direction < 0 ? minus : plus, log_u, direction, depth, eps, h0, rng);
    if (direction < 0) {
      minus = std::move(t.minus);
    } else {
      plus = std::move(t.plus);
    }
    sum_accept += t.sum_accept;
    n_steps += t.n_steps;
    if (t.divergent) divergent = true;
    if (!t.ok) break;
    if (rng.uniform() < t.n_valid / n_valid) proposal = std::move(t.proposal);
    n_valid += t.n_valid;
    if (!integ.no_uturn(minus, plus)) break;
  }
  current = std::move(proposal);
  return {n_steps > 0 ? sum_accept / n_steps : 0.0, divergent};
}

double find_initial_step(const Integrator& integ, const PhasePoint& start, Rng& rng) {
  double eps = 1.0;
  PhasePoint z0 = start;
  integ.draw_momentum(z0, rng);
  const double h0 = integ.joint(z0);
  auto log_ratio = [&](double e) {
    PhasePoint z = z0;
    integ.leapfrog(z, e);
    const double h = integ.joint(z);
    return std::isfinite(h) ? h - h0 : -std::numeric_limits<double>::infinity();
  };
  const double direction = log_ratio(eps) > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100; ++i) {
    const double lr = log_ratio(eps);
    if (direction > 0 ? !(lr > std::log(0.5)) : (lr > std::log(0.5))) break;
    eps *= std::pow(2.0, direction);
    if (eps < 1e-10 || eps > 1e7) break;
  }
  return eps;
}

class DualAveraging {
 public:
  void restart(double eps) {
    mu_ = std::log(10.0 * eps);
    h_bar_ = 0.0;
    log_eps_bar_ = 0.0;
    count_ = 0;
  }
  double update(double accept, double target) {
    ++count_;
    const double m = static_cast<double>(count_);
    h_bar_ = (1.0 - 1.0 / (m + kT0)) * h_bar_ + (target - accept) / (m + kT0);
    const double log_eps = mu_ - std::sqrt(m) / kGamma * h_bar_;
    const double w = std::pow(m, -kKappa);
    log_eps_bar_ = w * log_eps + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps);
  }
  double final_step() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_ = 0.0;
  double h_bar_ = 0.0;
  double log_eps_bar_ = 0.0;
  int count_ = 0;
};

// End points (exclusive) of the slow mass-adaptation windows.
std::vector<int> mass_window_ends(int warmup) {
  constexpr int kInitBuffer = 75, kTermBuffer = 50, kBaseWindow = 25;
  std::vector<int> ends;
  if (warmup < kInitBuffer + kTermBuffer + kBaseWindow) return ends;
  const int slow_end = warmup - kTermBuffer;
  int start = kInitBuffer;
  int size = kBaseWindow;
  while (start < slow_end) {
    int end = start + size;
    if (end + 2 * size > slow_end) end = slow_end;
    ends.push_back(end);
    start = end;
    size *= 2;
  }
  return ends;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

ChainResult run_nuts_chain(const LogDensity& log_density, std::vector<double> init,
                           const NutsConfig& config, std::uint64_t seed) {
  const std::size_t dim = init.size();
  if (dim == 0) throw std::invalid_argument("empty parameter vector");
  Rng rng(seed);
  std::vector<double> inv_mass(dim, 1.0);
  Integrator integ(log_density, inv_mass);

  PhasePoint current;
  current.q = std::move(init);
  current.p.assign(dim, 0.0);
  current.grad.assign(dim, 0.0);
  integ.evaluate(current);
  if (!std::isfinite(current.logp)) throw std::domain_error("log density not finite at init");

  double eps = find_initial_step(integ, current, rng);
  DualAveraging adapter;
  adapter.restart(eps);

  const auto window_ends = mass_window_ends(config.adapt_mass ? config.warmup : 0);
  std::size_t next_window = 0;
  std::vector<std::vector<double>> window_draws(dim);

  for (int it = 0; it < config.warmup; ++it) {
    const Transition tr = nuts_transition(integ, current, eps, config.max_depth, rng);
    eps = adapter.update(tr.accept, config.target_accept);
    if (next_window < window_ends.size() && it >= 75) {
      for (std::size_t i = 0; i < dim; ++i) window_draws[i].push_back(current.q[i]);
      if (it + 1 == window_ends[next_window]) {
        for (std::size_t i = 0; i < dim; ++i) {
          const double n = static_cast<double>(window_draws[i].size());
          const double var = sample_variance(window_draws[i]);
          inv_mass[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
          window_draws[i].clear();
        }
        ++next_window;
        eps = find_initial_step(integ, current, rng);
        adapter.restart(eps);
      }
    }
  }
  if (config.warmup > 0) eps = adapter.final_step();

  ChainResult result;
  result.draws.reserve(config.samples);
  double accept_sum = 0.0;
  for (int it = 0; it < config.samples; ++it) {
    const Transition tr = nuts_transition(integ, current, eps, config.max_depth, rng);
    accept_sum += tr.accept;
    if (tr.divergent) ++result.divergences;
    result.draws.push_back(current.q);
  }
  result.step_size = eps;
  result.inverse_mass = inv_mass;
  result.mean_accept = config.samples > 0 ? accept_sum / config.samples : 0.0;
  return result;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) throw std::invalid_argument("chains too short for split R-hat");
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(mean_of(h));
    vars.push_back(sample_variance(h));
  }
  const double w = mean_of(vars);
  const double b_over_n = halves.size() > 1 ? sample_variance(means) : 0.0;
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  if (w <= 0.0) return var_plus <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("chains must have equal length");
  }
  if (n < 4) throw std::invalid_argument("chains too short for ESS");

  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = sample_variance(chains[c]);
  }
  const double w = mean_of(vars);
  const double b_over_n = m > 1 ? sample_variance(means) : 0.0;
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1.0) / nn * w + b_over_n;
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  auto autocov = [&](std::size_t c, std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
    return s / nn;
  };
  auto rho = [&](std::size_t lag) {
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean_acov += autocov(c, lag);
    mean_acov /= static_cast<double>(m);
    return 1.0 - (w - mean_acov) / var_plus;
  };

  // Geyer's initial positive sequence with monotone pairs.
  double tau_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double rho_even = k == 0 ? 1.0 : rho(2 * k);
    double pair = rho_even + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau_pairs += pair;
    prev_pair = pair;
  }
  const double tau = std::max(-1.0 + 2.0 * tau_pairs, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

std::vector<std::vector<double>> component(const std::vector<ChainResult>& chains, std::size_t index) {
  std::vector<std::vector<double>> out;
  for (const auto& c : chains) {
    std::vector<double> v;
    v.reserve(c.draws.size());
    for (const auto& d : c.draws) v.push_back(d[index]);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace cptchoice::hmc
