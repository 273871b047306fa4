#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cptchoice {

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct BoxMinimizeOptions {
  int max_iterations = 1000;
  double projected_gradient_tol = 1e-9;   // stop when reached
  double accept_tol = 1e-6;               // `converged` threshold when stalled
  double armijo = 1e-4;
};

struct BoxMinimizeResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> gradient;
  double projected_gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Infinity norm of the gradient with components that point out of the box
/// at an active bound removed.
double projected_gradient_norm(std::span<const double> x, std::span<const double> grad,
                               std::span<const double> lower, std::span<const double> upper);

/// Active-set projected BFGS for box-constrained smooth minimization.
/// Iterates always satisfy lower <= x <= upper exactly.
BoxMinimizeResult minimize_box(const Objective& objective, std::vector<double> x0,
                               std::span<const double> lower, std::span<const double> upper,
                               const BoxMinimizeOptions& options = {});

/// `count` Latin-hypercube points scaled into the box.
std::vector<std::vector<double>> latin_hypercube(std::size_t count, std::span<const double> lower,
                                                 std::span<const double> upper, std::uint64_t seed);

}  // namespace cptchoice
