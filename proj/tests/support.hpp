#pragma once

// Hand-rolled generators for the property tests.

#include <cmath>
#include <stdexcept>

#include "cptchoice/estimation.hpp"
#include "cptchoice/random.hpp"

namespace testgen {

using namespace cptchoice;

inline double in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Strictly inside the fitting box, away from the faces by `margin` of the width.
inline CptParams interior_params(Rng& rng, double margin = 0.05) {
  const CptBounds b;
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double w = b.upper[i] - b.lower[i];
    v[i] = in(rng, b.lower[i] + margin * w, b.upper[i] - margin * w);
  }
  return CptParams::from_array(v);
}

inline double open_probability(Rng& rng) {
  double p = rng.uniform();
  while (p <= 0.0) p = rng.uniform();
  return p;
}

// Binomial counts drawn from the CPT curve at the given levels.
inline ChoiceDataset sample_cpt(Rng& rng, const CptParams& theta, const std::vector<double>& levels, int per_level) {
  ChoiceDataset d;
  for (double p : levels) {
    const double p2 = cpt_choice_prob(p, theta);
    LevelCounts l{p, 0, 0, std::nullopt};
    for (int i = 0; i < per_level; ++i) (rng.bernoulli(p2) ? l.n2 : l.n1) += 1;
    d.levels.push_back(l);
  }
  return d;
}

inline ChoiceDataset sample_blr(Rng& rng, const BlrParams& b, const std::vector<double>& levels, int per_level) {
  ChoiceDataset d;
  for (double p : levels) {
    const double p2 = blr_choice_prob(p, b);
    LevelCounts l{p, 0, 0, std::nullopt};
    for (int i = 0; i < per_level; ++i) (rng.bernoulli(p2) ? l.n2 : l.n1) += 1;
    d.levels.push_back(l);
  }
  return d;
}

// Random small dataset with arbitrary counts.
inline ChoiceDataset random_counts(Rng& rng, std::size_t levels, int max_count) {
  ChoiceDataset d;
  for (std::size_t k = 0; k < levels; ++k) {
    const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(levels);
    d.levels.push_back({p, static_cast<std::int64_t>(rng.below(max_count + 1)),
                        static_cast<std::int64_t>(rng.below(max_count + 1)), std::nullopt});
  }
  return d;
}

inline const std::vector<double>& paper_levels() {
  static const std::vector<double> v{0.1, 0.3, 0.5, 0.7, 0.9};
  return v;
}

inline const std::vector<double>& nine_levels() {
  static const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  return v;
}

}  // namespace testgen
