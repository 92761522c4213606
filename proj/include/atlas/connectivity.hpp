#pragma once

// Loss along linear paths and the connectivity metrics computed from it.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "atlas/error.hpp"
#include "atlas/model.hpp"
#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"

namespace atlas {

/// Anything that maps a parameter vector to (loss, accuracy).
template <class F>
concept PathEvaluator = requires(const F& f, const ParamVector& p) {
  { f(p) } -> std::convertible_to<LossAcc>;
};

struct CurveMeta {
  std::string split_id;
  std::size_t n_samples = 0;
  std::uint64_t eval_seed = 0;
  std::string id_a;
  std::string id_b;
};

struct LossCurve {
  std::vector<double> alphas;
  std::vector<double> losses;
  std::vector<double> accuracies;
  CurveMeta meta;

  std::size_t size() const { return alphas.size(); }

  void validate() const {
    require(alphas.size() >= 2, "loss curve: need at least 2 samples");
    require(losses.size() == alphas.size() && accuracies.size() == alphas.size(), "loss curve: length mismatch");
    require(alphas.front() == 0.0 && alphas.back() == 1.0, "loss curve: alphas must include 0 and 1");
    for (std::size_t i = 1; i < alphas.size(); ++i)
      require(alphas[i] > alphas[i - 1], "loss curve: alphas must be strictly increasing");
    for (double l : losses) require(std::isfinite(l), "loss curve: non-finite loss");
  }
};

/// Uniform grid {i/(n-1)}. Points below 1/2 are formed as 1 - (mirror point),
/// which is exact, so grid[n-1-i] == 1 - grid[i] bit for bit and grids whose
/// sizes nest (11 inside 21) share identical values.
inline std::vector<double> alpha_grid(std::size_t n) {
  require(n >= 2, "alpha_grid: need n >= 2");
  std::vector<double> a(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (2 * i >= n - 1) a[i] = static_cast<double>(i) / denom;
  }
  for (std::size_t i = 0; 2 * i < n - 1; ++i) a[i] = 1.0 - a[n - 1 - i];
  return a;
}

/// losses[i] = L(alpha_i * a + (1 - alpha_i) * b); alpha = 0 is b, alpha = 1 is a.
template <PathEvaluator Eval>
LossCurve eval_linear_path(const ParamVector& a, const ParamVector& b, std::size_t resolution, const Eval& eval,
                           CurveMeta meta = {}) {
  require_same_manifest(a, b, "eval_linear_path");
  LossCurve c;
  c.alphas = alpha_grid(resolution);
  c.meta = std::move(meta);
  for (double alpha : c.alphas) {
    const LossAcc r = eval(interpolate(a, b, alpha));
    c.losses.push_back(r.loss);
    c.accuracies.push_back(r.accuracy);
  }
  return c;
}

namespace detail {

// Chord weights of i and j at k. On the uniform grid they come from index
// differences, so a reversed curve uses the same two products (summed in the
// other order) and nested grids share weights exactly.
inline bool on_uniform_grid(const LossCurve& c) { return c.alphas == alpha_grid(c.size()); }

inline double above_chord(const LossCurve& c, bool uniform, std::size_t i, std::size_t j, std::size_t k) {
  if (c.losses[i] == c.losses[j]) return c.losses[k] - c.losses[i];
  double wi, wj;
  if (uniform) {
    const auto span = static_cast<double>(j - i);
    wi = static_cast<double>(j - k) / span;
    wj = static_cast<double>(k - i) / span;
  } else {
    const double span = c.alphas[j] - c.alphas[i];
    wi = (c.alphas[j] - c.alphas[k]) / span;
    wj = (c.alphas[k] - c.alphas[i]) / span;
  }
  return c.losses[k] - (wi * c.losses[i] + wj * c.losses[j]);
}

}  // namespace detail

/// Largest elevation above the endpoint chord; 0 when nothing rises above it.
inline double barrier_height(const LossCurve& c) {
  c.validate();
  const bool uniform = detail::on_uniform_grid(c);
  const std::size_t last = c.size() - 1;
  double best = 0.0;
  for (std::size_t k = 1; k < last; ++k) best = std::max(best, detail::above_chord(c, uniform, 0, last, k));
  return best;
}

/// Largest barrier over every sampled sub-segment (exhaustive over i < k < j).
inline double convexity_gap(const LossCurve& c) {
  c.validate();
  const bool uniform = detail::on_uniform_grid(c);
  const std::size_t n = c.size();
  double best = 0.0;
  for (std::size_t i = 0; i + 2 < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j)
      for (std::size_t k = i + 1; k < j; ++k) best = std::max(best, detail::above_chord(c, uniform, i, j, k));
  return best;
}

/// Trapezoidal area under the curve after shifting its minimum to zero.
inline double auc(const LossCurve& c) {
  c.validate();
  const double lo = *std::min_element(c.losses.begin(), c.losses.end());
  double area = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i)
    area += 0.5 * (c.alphas[i] - c.alphas[i - 1]) * ((c.losses[i] - lo) + (c.losses[i - 1] - lo));
  return area;
}

inline LossCurve reversed(const LossCurve& c) {
  LossCurve r = c;
  r.alphas = alpha_grid(c.size());
  std::reverse(r.losses.begin(), r.losses.end());
  std::reverse(r.accuracies.begin(), r.accuracies.end());
  std::swap(r.meta.id_a, r.meta.id_b);
  return r;
}

// ---------------------------------------------------------------------------
// epsilon-convex basin check

struct BasinCheckReport {
  double epsilon = 0.0;
  std::size_t n_combos = 0;
  double max_violation = 0.0;
  bool pass = true;
  std::vector<std::size_t> witness_models;
  std::vector<double> witness_weights;
  // Pairwise convexity-gap cross-check, run when the check passes.
  std::size_t pairs_checked = 0;
  double max_pair_gap = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> counterexamples;
};

struct BasinCheckOptions {
  double epsilon = 0.0;
  std::size_t n_combos = 256;
  std::uint64_t seed = 0;
  std::size_t resolution = 11;
  double theorem_tolerance = 1e-9;
};

/// Samples convex combinations of the models (flat Dirichlet weights over random
/// subsets of 2..k models, plus the uniform barycentre of all models) and
/// measures L(sum w_k theta_k) - sum w_k L(theta_k). When the maximum is within
/// epsilon, every pair's convexity gap must also be within epsilon.
template <PathEvaluator Eval>
BasinCheckReport epsilon_basin_check(std::span<const ParamVector> models, const Eval& eval,
                                     const BasinCheckOptions& opt) {
  require(!models.empty(), "epsilon_basin_check: no models");
  for (const auto& m : models) require_same_manifest(models[0], m, "epsilon_basin_check");
  BasinCheckReport rep;
  rep.epsilon = opt.epsilon;
  if (models.size() < 2) {
    rep.pass = 0.0 <= opt.epsilon;
    return rep;
  }
  std::vector<double> losses;
  for (const auto& m : models) losses.push_back(eval(m).loss);

  auto try_combo = [&](const std::vector<std::size_t>& members, const std::vector<double>& w) {
    std::vector<ParamVector> pts;
    double mixed = 0.0;
    for (std::size_t t = 0; t < members.size(); ++t) {
      pts.push_back(models[members[t]]);
      mixed += w[t] * losses[members[t]];
    }
    const double v = eval(convex_combine(pts, w)).loss - mixed;
    ++rep.n_combos;
    if (rep.witness_models.empty() || v > rep.max_violation) {
      rep.max_violation = v;
      rep.witness_models = members;
      rep.witness_weights = w;
    }
  };

  {
    std::vector<std::size_t> all(models.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    try_combo(all, std::vector<double>(models.size(), 1.0 / static_cast<double>(models.size())));
  }
  Rng rng(derive_seed(opt.seed, tag_of("basin.combos")));
  for (std::size_t c = 0; c < opt.n_combos; ++c) {
    const std::size_t m = 2 + uniform_index(rng, models.size() - 1);
    auto members = sample_without_replacement(models.size(), m, rng);
    std::sort(members.begin(), members.end());
    try_combo(members, flat_dirichlet(m, rng));
  }
  rep.max_violation = std::max(rep.max_violation, 0.0);
  rep.pass = rep.max_violation <= opt.epsilon;

  if (rep.pass) {
    for (std::size_t i = 0; i < models.size(); ++i)
      for (std::size_t j = i + 1; j < models.size(); ++j) {
        const double cg = convexity_gap(eval_linear_path(models[i], models[j], opt.resolution, eval));
        ++rep.pairs_checked;
        rep.max_pair_gap = std::max(rep.max_pair_gap, cg);
        if (cg > opt.epsilon + opt.theorem_tolerance) rep.counterexamples.emplace_back(i, j);
      }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string curve_to_csv(const LossCurve& c) {
  std::string out = "alpha,loss,accuracy\n";
  for (std::size_t i = 0; i < c.size(); ++i)
    out += format_real(c.alphas[i]) + "," + format_real(c.losses[i]) + "," + format_real(c.accuracies[i]) + "\n";
  return out;
}

inline LossCurve curve_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == "alpha,loss,accuracy", "curve csv: bad header");
  LossCurve c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, l, acc;
    require(std::getline(row, a, ',') && std::getline(row, l, ',') && std::getline(row, acc),
            "curve csv: malformed row '" + line + "'");
    c.alphas.push_back(std::stod(a));
    c.losses.push_back(std::stod(l));
    c.accuracies.push_back(std::stod(acc));
  }
  c.validate();
  return c;
}

/// <idA>__<idB>__<split>.csv
inline std::string curve_file_name(const std::string& id_a, const std::string& id_b, const std::string& split) {
  return id_a + "__" + id_b + "__" + split + ".csv";
}

}  // namespace atlas
