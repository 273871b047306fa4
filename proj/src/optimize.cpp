#include "cptchoice/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cptchoice/random.hpp"

namespace cptchoice {
namespace {

bool at_lower(double x, double lo) { return x <= lo; }
bool at_upper(double x, double hi) { return x >= hi; }

// Variables held at a bound because the gradient pushes outward.
std::vector<bool> active_set(std::span<const double> x, std::span<const double> g,
                             std::span<const double> lower, std::span<const double> upper) {
  std::vector<bool> active(x.size(), false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    active[i] = (at_lower(x[i], lower[i]) && g[i] > 0.0) || (at_upper(x[i], upper[i]) && g[i] < 0.0);
  }
  return active;
}

void project(std::vector<double>& x, std::span<const double> lower, std::span<const double> upper) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
}

using Matrix = std::vector<std::vector<double>>;

Matrix identity(std::size_t n, double scale = 1.0) {
  Matrix m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = scale;
  return m;
}

// Solves (A + shift I) x = b by Cholesky; false if not positive definite.
bool solve_spd(Matrix a, std::vector<double> b, double shift, std::vector<double>& x) {
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) a[i][i] += shift;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    if (!(d > 0.0)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      a[i][j] = s / a[j][j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i][k] * b[k];
    b[i] = s / a[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k][i] * b[k];
    b[i] = s / a[i][i];
  }
  x = std::move(b);
  return true;
}

// Damped projected Newton steps on the free variables, with the Hessian
// taken by central differences of the gradient. Used to finish off runs
// where BFGS stalls in narrow curved valleys.
void newton_polish(const Objective& objective, std::vector<double>& x, double& f, std::vector<double>& g,
                   std::span<const double> lower, std::span<const double> upper,
                   const BoxMinimizeOptions& options, int budget, int& iterations, int& evaluations) {
  const std::size_t n = x.size();
  std::vector<double> xp(n), gp(n), gm(n), x_new(n), g_new(n);
  double damping = 1e-8;
  for (int it = 0; it < budget; ++it, ++iterations) {
    if (projected_gradient_norm(x, g, lower, upper) <= options.projected_gradient_tol) return;
    const auto active = active_set(x, g, lower, upper);
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) free.push_back(i);
    }
    if (free.empty()) return;

    Matrix hess(free.size(), std::vector<double>(free.size(), 0.0));
    for (std::size_t a = 0; a < free.size(); ++a) {
      const std::size_t i = free[a];
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      xp = x;
      xp[i] = x[i] + h;
      objective(xp, gp);
      xp[i] = x[i] - h;
      objective(xp, gm);
      evaluations += 2;
      for (std::size_t b = 0; b < free.size(); ++b) hess[a][b] = (gp[free[b]] - gm[free[b]]) / (2.0 * h);
    }
    double scale = 0.0;
    for (std::size_t a = 0; a < free.size(); ++a) {
      for (std::size_t b = 0; b < a; ++b) hess[a][b] = hess[b][a] = 0.5 * (hess[a][b] + hess[b][a]);
      scale = std::max(scale, std::abs(hess[a][a]));
    }
    std::vector<double> rhs(free.size());
    for (std::size_t a = 0; a < free.size(); ++a) rhs[a] = -g[free[a]];

    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt, damping *= 10.0) {
      std::vector<double> step;
      if (!solve_spd(hess, rhs, damping * std::max(scale, 1e-12), step)) continue;
      x_new = x;
      for (std::size_t a = 0; a < free.size(); ++a) x_new[free[a]] += step[a];
      project(x_new, lower, upper);
      const double f_new = objective(x_new, g_new);
      ++evaluations;
      // Near the optimum f is flat to rounding, so a step that shrinks the
      // projected gradient is accepted when f is unchanged at working precision.
      const double slack = 1e-13 * std::max(1.0, std::abs(f));
      if (std::isfinite(f_new) && f_new <= f + slack) {
        const bool progress = f_new < f - slack || projected_gradient_norm(x_new, g_new, lower, upper) <
                                                       projected_gradient_norm(x, g, lower, upper);
        if (!progress) continue;
        x = x_new;
        g = g_new;
        f = f_new;
        improved = true;
      }
    }
    if (!improved) return;
    damping = std::max(1e-10, damping * 1e-3);
  }
}

}  // namespace

double projected_gradient_norm(std::span<const double> x, std::span<const double> grad,
                               std::span<const double> lower, std::span<const double> upper) {
  double norm = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Distance moved by one projected steepest-descent step, capped by the bound.
    const double stepped = std::clamp(x[i] - grad[i], lower[i], upper[i]);
    norm = std::max(norm, std::abs(stepped - x[i]));
  }
  return norm;
}

namespace {

BoxMinimizeResult minimize_once(const Objective& objective, std::vector<double> x0,
                                std::span<const double> lower, std::span<const double> upper,
                                const BoxMinimizeOptions& options) {
  const std::size_t n = x0.size();
  BoxMinimizeResult result;
  std::vector<double> x = std::move(x0);
  project(x, lower, upper);
  std::vector<double> g(n), g_new(n), x_new(n), d(n);
  double f = objective(x, g);
  result.evaluations = 1;
  if (!std::isfinite(f)) throw std::domain_error("objective is not finite at the start point");

  Matrix h = identity(n);
  bool h_is_identity = true;

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (projected_gradient_norm(x, g, lower, upper) <= options.projected_gradient_tol) break;

    const auto active = active_set(x, g, lower, upper);
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = 0.0;
      if (active[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!active[j]) d[i] -= h[i][j] * g[j];
      }
      slope += d[i] * g[i];
    }
    if (!(slope < 0.0)) {
      h = identity(n);
      h_is_identity = true;
      slope = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = active[i] ? 0.0 : -g[i];
        slope += d[i] * g[i];
      }
    }

    // Projected backtracking line search.
    double t = 1.0;
    double f_new = f;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + t * d[i];
      project(x_new, lower, upper);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (x_new[i] - x[i]);
      f_new = objective(x_new, g_new);
      ++result.evaluations;
      if (std::isfinite(f_new) && f_new <= f + options.armijo * decrease) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (h_is_identity) break;
      h = identity(n);
      h_is_identity = true;
      continue;
    }

    std::vector<double> s(n), y(n);
    double sy = 0.0, yy = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
      sy += s[i] * y[i];
      yy += y[i] * y[i];
      ss += s[i] * s[i];
    }
    const bool moved = ss > 0.0;
    x.swap(x_new);
    g.swap(g_new);
    const double f_old = f;
    f = f_new;

    if (sy > 1e-12 * std::sqrt(ss * yy)) {
      if (h_is_identity) h = identity(n, sy / yy);
      // Inverse BFGS update: H <- (I - r s y^T) H (I - r y s^T) + r s s^T.
      const double r = 1.0 / sy;
      std::vector<double> hy(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) hy[i] += h[i][j] * y[j];
      const double yhy = std::inner_product(y.begin(), y.end(), hy.begin(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
      }
      h_is_identity = false;
    }
    if (!moved || (f_old - f) <= 1e-16 * std::max(1.0, std::abs(f))) {
      // No progress left at working precision.
      if (projected_gradient_norm(x, g, lower, upper) <= options.accept_tol) break;
      if (h_is_identity && !moved) break;
      h = identity(n);
      h_is_identity = true;
    }
  }

  if (projected_gradient_norm(x, g, lower, upper) > options.projected_gradient_tol) {
    newton_polish(objective, x, f, g, lower, upper, options, std::min(100, options.max_iterations - iter), iter,
                  result.evaluations);
  }
  result.iterations = iter;
  result.value = f;
  result.projected_gradient_norm = projected_gradient_norm(x, g, lower, upper);
  result.converged = result.projected_gradient_norm <= options.accept_tol;
  result.x = std::move(x);
  result.gradient = std::move(g);
  return result;
}

}  // namespace

BoxMinimizeResult minimize_box(const Objective& objective, std::vector<double> x0,
                               std::span<const double> lower, std::span<const double> upper,
                               const BoxMinimizeOptions& options) {
  const std::size_t n = x0.size();
  if (lower.size() != n || upper.size() != n) throw std::invalid_argument("bound dimension mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lower[i] <= upper[i])) throw std::invalid_argument("empty box");
  }
  auto result = minimize_once(objective, std::move(x0), lower, upper, options);
  // Long flat valleys can leave the curvature model stale; a fresh start from
  // the last point usually finishes the job.
  for (int restart = 0; restart < 5 && result.projected_gradient_norm > options.projected_gradient_tol &&
                          result.iterations < options.max_iterations;
       ++restart) {
    BoxMinimizeOptions remaining = options;
    remaining.max_iterations = options.max_iterations - result.iterations;
    auto again = minimize_once(objective, result.x, lower, upper, remaining);
    again.iterations += result.iterations;
    again.evaluations += result.evaluations;
    const bool better = again.value < result.value ||
                        (again.value <= result.value && again.projected_gradient_norm < result.projected_gradient_norm);
    if (!better) {
      result.evaluations = again.evaluations;
      break;
    }
    result = std::move(again);
  }
  return result;
}

std::vector<std::vector<double>> latin_hypercube(std::size_t count, std::span<const double> lower,
                                                 std::span<const double> upper, std::uint64_t seed) {
  const std::size_t dim = lower.size();
  Rng rng(seed);
  std::vector<std::vector<double>> points(count, std::vector<double>(dim));
  std::vector<std::size_t> strata(count);
  for (std::size_t j = 0; j < dim; ++j) {
    std::iota(strata.begin(), strata.end(), 0);
    for (std::size_t i = count; i > 1; --i) std::swap(strata[i - 1], strata[rng.below(i)]);
    for (std::size_t i = 0; i < count; ++i) {
      const double u = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(count);
      points[i][j] = lower[j] + u * (upper[j] - lower[j]);
    }
  }
  return points;
}

}  // namespace cptchoice
