#pragma once

// Handmade loss curves for the metric oracle comparisons.

#include <cmath>
#include <vector>

#include "atlas/connectivity.hpp"

namespace fixtures {

inline atlas::LossCurve uniform_curve(std::vector<double> losses) {
  atlas::LossCurve c;
  c.alphas = atlas::alpha_grid(losses.size());
  c.accuracies.assign(losses.size(), 0.0);
  c.losses = std::move(losses);
  return c;
}

inline atlas::LossCurve curve_at(std::vector<double> alphas, std::vector<double> losses) {
  atlas::LossCurve c;
  c.alphas = std::move(alphas);
  c.accuracies.assign(losses.size(), 0.0);
  c.losses = std::move(losses);
  return c;
}

inline std::vector<atlas::LossCurve> handmade_curves() {
  std::vector<atlas::LossCurve> out = {
      uniform_curve({0, 0.2, 0.1, 0.5, 0.3}),
      uniform_curve({1, 0, 1}),
      uniform_curve({0, 1, 0}),
      uniform_curve({4, 1, 0, 1, 4}),
      uniform_curve({2, 2}),
      uniform_curve({3, 3, 3, 3}),
      uniform_curve({0, 1}),
      uniform_curve({1, 0}),
      uniform_curve({0.5, 0.9, 0.2, 0.8, 0.1, 0.7, 0.3}),
      uniform_curve({1.2, 1.5, 1.9, 1.4, 1.1, 1.3, 1.0, 0.9, 1.6, 1.2, 1.25}),
      uniform_curve({0, 0, 0, 5, 0, 0, 0}),
      uniform_curve({-1, -0.5, -2, -0.2, -1}),
      uniform_curve({10, 9, 8, 7, 6, 5}),
      uniform_curve({0, 3, 1, 4, 1, 5, 9, 2, 6}),
      uniform_curve({0.3, 0.31, 0.29, 0.33, 0.3, 0.28, 0.35, 0.3, 0.3, 0.31, 0.3, 0.32, 0.3, 0.29, 0.3, 0.31,
                     0.3, 0.3, 0.29, 0.3, 0.3}),
      curve_at({0, 0.1, 0.5, 0.9, 1}, {1, 2, 0, 2, 1}),
      curve_at({0, 0.7, 1}, {0, 1, 0}),
      curve_at({0, 0.2, 0.25, 0.6, 1}, {2, 0.5, 1.5, 0.7, 0.4}),
      curve_at({0, 1.0 / 3, 2.0 / 3, 1}, {1e-9, 2e-9, 0, 3e-9}),
      curve_at({0, 0.05, 0.95, 1}, {100, 0, 0, 100}),
  };
  std::vector<double> wave;
  for (int i = 0; i < 21; ++i) wave.push_back(std::sin(0.9 * i) + 0.1 * i);
  out.push_back(uniform_curve(wave));
  std::vector<double> bump;
  for (int i = 0; i < 11; ++i) bump.push_back(std::exp(-std::pow((i - 6) / 2.0, 2)));
  out.push_back(uniform_curve(bump));
  return out;
}

}  // namespace fixtures
