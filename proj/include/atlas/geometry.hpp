#pragma once

// Sharpness, planes through three models, and segmented low-loss curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atlas/connectivity.hpp"
#include "atlas/error.hpp"
#include "atlas/model.hpp"
#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"

namespace atlas {

/// A loss over a finite set of examples: full loss plus minibatch gradients.
/// Analytic test losses report size() == 1 and ignore the indices.
template <class O>
concept Objective = requires(const O& o, const ParamVector& x, std::span<const std::size_t> idx) {
  { o.size() } -> std::convertible_to<std::size_t>;
  { o.loss(x) } -> std::convertible_to<double>;
  { o.minibatch_gradient(x, idx) } -> std::convertible_to<ParamVector>;
};

/// Mean cross-entropy of a model on a fixed batch.
class ModelObjective {
 public:
  ModelObjective(ModelConfig config, Batch batch) : config_(config), batch_(std::move(batch)) {}

  std::size_t size() const { return batch_.rows; }
  double loss(const ParamVector& x) const { return loss_acc(forward(x, batch_, config_), batch_.labels).loss; }
  ParamVector minibatch_gradient(const ParamVector& x, std::span<const std::size_t> idx) const {
    return gradient(x, batch_.select(idx), config_);
  }
  LossAcc operator()(const ParamVector& x) const { return loss_acc(forward(x, batch_, config_), batch_.labels); }

 private:
  ModelConfig config_;
  Batch batch_;
};

namespace detail {

inline std::vector<std::size_t> draw_minibatch(std::size_t n, std::size_t batch, Rng& rng) {
  if (batch >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = uniform_index(rng, n);
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// epsilon-sharpness

struct SharpnessConfig {
  double epsilon = 1e-5;
  std::size_t ascent_steps = 8192;
  double ascent_lr = 8e-5;
  std::size_t batch_size = 32;
  std::size_t accumulation = 4;
  std::size_t eval_samples = 32768;
  std::size_t eval_interval = 512;
  std::uint64_t seed = 0;

  void validate() const {
    require(epsilon > 0.0 && std::isfinite(epsilon), "sharpness: epsilon must be > 0");
    require(ascent_steps >= 1, "sharpness: ascent_steps must be >= 1");
    require(ascent_lr > 0.0, "sharpness: ascent_lr must be > 0");
    require(batch_size >= 1 && accumulation >= 1, "sharpness: batch_size and accumulation must be >= 1");
    require(eval_interval >= 1, "sharpness: eval_interval must be >= 1");
  }
};

inline nlohmann::json to_json(const SharpnessConfig& c) {
  return {{"epsilon", c.epsilon},       {"ascent_steps", c.ascent_steps}, {"ascent_lr", c.ascent_lr},
          {"batch_size", c.batch_size}, {"accumulation", c.accumulation}, {"eval_samples", c.eval_samples},
          {"eval_interval", c.eval_interval}, {"seed", c.seed}};
}

inline SharpnessConfig sharpness_config_from_json(const nlohmann::json& j) {
  SharpnessConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.ascent_steps = j.value("ascent_steps", c.ascent_steps);
  c.ascent_lr = j.value("ascent_lr", c.ascent_lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accumulation = j.value("accumulation", c.accumulation);
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

struct SharpnessResult {
  double sharpness = 0.0;
  double base_loss = 0.0;
  double max_loss = 0.0;
  std::size_t steps = 0;
};

/// Projected gradient ascent on y inside |y_i| <= eps (|x_i| + 1); returns
/// 100 (max f(x+y) - f(x)) / (1 + f(x)), never below zero.
template <Objective O>
SharpnessResult epsilon_sharpness(const ParamVector& x, const O& obj, const SharpnessConfig& cfg) {
  cfg.validate();
  require(obj.size() >= 1, "sharpness: empty objective");
  SharpnessResult res;
  res.base_loss = obj.loss(x);
  if (!std::isfinite(res.base_loss)) throw RuntimeFailure("sharpness: non-finite base loss");
  require(res.base_loss >= 0.0, "sharpness: loss must be nonnegative");
  res.max_loss = res.base_loss;

  std::vector<double> radius(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) radius[i] = cfg.epsilon * (std::abs(x[i]) + 1.0);

  Rng rng(derive_seed(cfg.seed, tag_of("sharpness.batches")));
  ParamVector y(x.manifest_ptr());
  ParamVector probe = x;
  auto track = [&] {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + y[i];
    const double f = obj.loss(probe);
    if (!std::isfinite(f)) throw RuntimeFailure("sharpness: non-finite loss during ascent");
    res.max_loss = std::max(res.max_loss, f);
  };

  for (std::size_t step = 1; step <= cfg.ascent_steps; ++step) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + y[i];
    ParamVector g(x.manifest_ptr());
    for (std::size_t a = 0; a < cfg.accumulation; ++a) {
      const auto idx = detail::draw_minibatch(obj.size(), cfg.batch_size, rng);
      axpy(1.0 / static_cast<double>(cfg.accumulation), obj.minibatch_gradient(probe, idx), g);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) throw RuntimeFailure("sharpness: non-finite gradient during ascent");
      y[i] = std::clamp(y[i] + cfg.ascent_lr * g[i], -radius[i], radius[i]);
    }
    res.steps = step;
    if (step % cfg.eval_interval == 0 || step == cfg.ascent_steps) track();
  }
  res.sharpness = std::max(0.0, 100.0 * (res.max_loss - res.base_loss) / (1.0 + res.base_loss));
  return res;
}

// ---------------------------------------------------------------------------
// Planes

struct PlaneBasis {
  ParamVector origin;
  ParamVector u;
  ParamVector v;
  double scale_unit = 0.0;
  std::array<std::pair<double, double>, 3> anchors{};

  /// origin + (x s) u + (y s) v
  ParamVector point(double x, double y) const {
    ParamVector p = origin;
    const double a = x * scale_unit, b = y * scale_unit;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += a * u[i] + b * v[i];
    return p;
  }
};

inline PlaneBasis plane_basis(const ParamVector& p1, const ParamVector& p2, const ParamVector& p3) {
  require_same_manifest(p1, p2, "plane_basis");
  require_same_manifest(p1, p3, "plane_basis");
  PlaneBasis b;
  b.origin = p1;
  ParamVector d2 = p2 - p1;
  const double len = norm(d2);
  require(len > 0.0, "plane_basis: first two anchors coincide");
  b.scale_unit = len;
  b.u = (1.0 / len) * d2;
  ParamVector d3 = p3 - p1;
  const double along = dot(d3, b.u);
  ParamVector resid = d3;
  axpy(-along, b.u, resid);
  // second pass keeps u and v orthogonal to rounding
  axpy(-dot(resid, b.u), b.u, resid);
  const double rn = norm(resid);
  require(rn > 1e-12 * std::max(1.0, norm(d3)), "plane_basis: anchors are collinear");
  b.v = (1.0 / rn) * resid;
  b.anchors = {std::pair{0.0, 0.0}, std::pair{1.0, 0.0}, std::pair{along / len, dot(d3, b.v) / len}};
  return b;
}

struct PlaneGrid {
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> losses;  // row-major: losses[iy * xs.size() + ix]
  double scale_unit = 0.0;
  std::array<std::pair<double, double>, 3> anchors{};
  CurveMeta meta;

  double at(std::size_t ix, std::size_t iy) const { return losses[iy * xs.size() + ix]; }
};

/// lo + (hi - lo) * i / (n - 1); grids of size n and 2n - 1 agree on shared points.
inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  require(n >= 2, "grid: resolution must be >= 2");
  require(lo < hi, "grid: empty range");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo + (hi - lo) * (static_cast<double>(i) / static_cast<double>(n - 1));
  g.back() = hi;
  return g;
}

template <PathEvaluator Eval>
PlaneGrid plane_loss_surface(const PlaneBasis& basis, std::pair<double, double> x_range,
                             std::pair<double, double> y_range, std::size_t resolution, const Eval& eval,
                             CurveMeta meta = {}) {
  PlaneGrid g;
  g.xs = linear_grid(x_range.first, x_range.second, resolution);
  g.ys = linear_grid(y_range.first, y_range.second, resolution);
  g.scale_unit = basis.scale_unit;
  g.anchors = basis.anchors;
  g.meta = std::move(meta);
  g.losses.reserve(g.xs.size() * g.ys.size());
  for (double y : g.ys)
    for (double x : g.xs) g.losses.push_back(LossAcc(eval(basis.point(x, y))).loss);
  return g;
}

inline std::string plane_to_csv(const PlaneGrid& g) {
  std::string out = "x,y,loss\n";
  for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix)
      out += format_real(g.xs[ix]) + "," + format_real(g.ys[iy]) + "," + format_real(g.at(ix, iy)) + "\n";
  return out;
}

inline nlohmann::json plane_sidecar(const PlaneGrid& g, const std::array<std::string, 3>& anchor_ids) {
  nlohmann::json anchors = nlohmann::json::array();
  for (std::size_t i = 0; i < 3; ++i)
    anchors.push_back({{"id", anchor_ids[i]}, {"x", g.anchors[i].first}, {"y", g.anchors[i].second}});
  return {{"scale_unit", g.scale_unit},
          {"x_range", {g.xs.front(), g.xs.back()}},
          {"y_range", {g.ys.front(), g.ys.back()}},
          {"resolution", g.xs.size()},
          {"anchors", anchors},
          {"split", g.meta.split_id},
          {"n_samples", g.meta.n_samples},
          {"eval_seed", g.meta.eval_seed}};
}

// ---------------------------------------------------------------------------
// Segmented chains

/// Points a = P_0, P_1..P_k (bends), P_{k+1} = b joined by straight segments of
/// equal parameter length. chain(0) = a and chain(1) = b exactly.
struct PolyChain {
  ParamVector a;
  ParamVector b;
  std::vector<ParamVector> bends;

  std::size_t segments() const { return bends.size() + 1; }

  const ParamVector& node(std::size_t i) const {
    if (i == 0) return a;
    if (i == segments()) return b;
    return bends[i - 1];
  }

  /// Segment index and local weight of t.
  std::pair<std::size_t, double> locate(double t) const {
    require(t >= 0.0 && t <= 1.0, "chain: t outside [0,1]");
    const double s = t * static_cast<double>(segments());
    const auto seg = std::min(static_cast<std::size_t>(s), segments() - 1);
    return {seg, std::clamp(s - static_cast<double>(seg), 0.0, 1.0)};
  }

  ParamVector at(double t) const {
    if (t == 0.0) return a;
    if (t == 1.0) return b;
    const auto [seg, tau] = locate(t);
    return interpolate(node(seg + 1), node(seg), tau);
  }
};

inline PolyChain straight_chain(const ParamVector& a, const ParamVector& b, std::size_t k_bends) {
  require_same_manifest(a, b, "chain");
  PolyChain c{a, b, {}};
  for (std::size_t j = 1; j <= k_bends; ++j)
    c.bends.push_back(interpolate(b, a, static_cast<double>(j) / static_cast<double>(k_bends + 1)));
  return c;
}

struct ChainFitConfig {
  std::size_t k_bends = 3;
  std::size_t fit_steps = 2000;
  double fit_lr = 1e-2;
  std::size_t batch_size = 32;
  double jitter = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    require(k_bends >= 1, "curve: k_bends must be >= 1");
    require(fit_lr > 0.0, "curve: fit_lr must be > 0");
    require(batch_size >= 1, "curve: batch_size must be >= 1");
    require(jitter >= 0.0, "curve: jitter must be >= 0");
  }
};

/// Bends start on the straight segment, nudged along one shared random
/// direction (scaled by jitter * |b - a|) so a symmetric saddle on the segment
/// does not pin them. Each step draws one t, takes the chain point and moves
/// the two adjacent bends down the loss gradient; endpoints stay fixed.
template <Objective O>
PolyChain fit_low_loss_curve(const ParamVector& a, const ParamVector& b, const O& obj, const ChainFitConfig& cfg) {
  cfg.validate();
  PolyChain chain = straight_chain(a, b, cfg.k_bends);
  if (cfg.fit_steps == 0) return chain;

  Rng rng(derive_seed(cfg.seed, tag_of("curve.fit")));
  if (cfg.jitter > 0.0) {
    ParamVector dir(a.manifest_ptr());
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = standard_normal(rng);
    const double dn = norm(dir);
    if (dn > 0.0) {
      const double scale = cfg.jitter * euclidean_distance(a, b) / dn;
      for (std::size_t j = 0; j < chain.bends.size(); ++j) {
        const double bump = std::sin(std::numbers::pi * static_cast<double>(j + 1) /
                                     static_cast<double>(chain.segments()));
        axpy(scale * bump, dir, chain.bends[j]);
      }
    }
  }

  for (std::size_t step = 0; step < cfg.fit_steps; ++step) {
    const double t = uniform01(rng);
    const auto [seg, tau] = chain.locate(t);
    const ParamVector p = interpolate(chain.node(seg + 1), chain.node(seg), tau);
    const auto idx = detail::draw_minibatch(obj.size(), cfg.batch_size, rng);
    const ParamVector g = obj.minibatch_gradient(p, idx);
    if (!g.all_finite()) throw RuntimeFailure("curve: non-finite gradient while fitting");
    // d chain(t) / d P_seg = 1 - tau, d chain(t) / d P_{seg+1} = tau
    const double lr = cfg.fit_lr;
    if (seg >= 1) axpy(-lr * (1.0 - tau), g, chain.bends[seg - 1]);
    if (seg + 1 <= chain.bends.size()) axpy(-lr * tau, g, chain.bends[seg]);
  }
  for (const auto& bend : chain.bends)
    if (!bend.all_finite()) throw RuntimeFailure("curve: fit diverged");
  return chain;
}

/// Loss at n uniform t values along the chain; the curve's alphas hold t.
template <PathEvaluator Eval>
LossCurve eval_chain_path(const PolyChain& chain, std::size_t n_points, const Eval& eval, CurveMeta meta = {}) {
  LossCurve c;
  c.alphas = alpha_grid(n_points);
  c.meta = std::move(meta);
  for (double t : c.alphas) {
    const LossAcc r = eval(chain.at(t));
    c.losses.push_back(r.loss);
    c.accuracies.push_back(r.accuracy);
  }
  return c;
}

inline nlohmann::json chain_report(const PolyChain& chain, const LossCurve& along, const LossCurve& linear) {
  return {{"k_bends", chain.bends.size()},
          {"max_loss_chain", *std::max_element(along.losses.begin(), along.losses.end())},
          {"max_loss_linear", *std::max_element(linear.losses.begin(), linear.losses.end())},
          {"barrier_height_chain", barrier_height(along)},
          {"barrier_height_linear", barrier_height(linear)}};
}

}  // namespace atlas
