#pragma once

// Reference implementations used only by tests. They are written from the
// definitions, with different arithmetic from the library, so agreement is
// evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "atlas/model.hpp"
#include "atlas/param_space.hpp"

namespace oracle {

// Chord value at x between (xi, yi) and (xj, yj), slope form.
inline double chord(double xi, double yi, double xj, double yj, double x) {
  return yi + (x - xi) * (yj - yi) / (xj - xi);
}

inline double barrier(std::span<const double> a, std::span<const double> l) {
  double best = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    best = std::max(best, l[k] - chord(a.front(), l.front(), a.back(), l.back(), a[k]));
  return best;
}

inline double convexity_gap(std::span<const double> a, std::span<const double> l) {
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j)
      for (std::size_t k = i; k <= j; ++k) best = std::max(best, l[k] - chord(a[i], l[i], a[j], l[j], a[k]));
  return best;
}

// Plain trapezoid area, then subtract the rectangle under the minimum.
inline double auc(std::span<const double> a, std::span<const double> l) {
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) area += (a[i + 1] - a[i]) * (l[i] + l[i + 1]) / 2.0;
  const double lo = *std::min_element(l.begin(), l.end());
  return area - lo * (a.back() - a.front());
}

// Central difference with step h.
template <class F>
double central_diff(F&& f, atlas::ParamVector x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

// Mean cross-entropy of the classifier, recomputed in long double from the
// tensor layout so finite differences are not swamped by rounding.
inline long double model_loss(const atlas::ParamVector& p, const atlas::Batch& b, const atlas::ModelConfig& c) {
  using namespace atlas::tensor_names;
  const auto E = p.tensor(token), W = p.tensor(dense_w), bias = p.tensor(dense_b), H = p.tensor(head_w),
             hb = p.tensor(head_b);
  const bool has_pos = c.positional_mode == atlas::PositionalMode::learned;
  std::span<const double> P;
  if (has_pos) P = p.tensor(position);
  const std::size_t d = c.embed_dim, h = c.hidden_dim, k = c.n_classes;
  long double total = 0;
  for (std::size_t r = 0; r < b.rows; ++r) {
    std::vector<long double> pooled(h, 0);
    long double count = 0;
    for (std::size_t t = 0; t < b.cols; ++t) {
      const int tok = b.tokens[r * b.cols + t];
      if (tok == atlas::kPadId) continue;
      count += 1;
      for (std::size_t j = 0; j < h; ++j) {
        long double z = bias[j];
        for (std::size_t q = 0; q < d; ++q)
          z += static_cast<long double>(W[j * d + q]) *
               (static_cast<long double>(E[static_cast<std::size_t>(tok) * d + q]) + (has_pos ? P[t * d + q] : 0.0L));
        pooled[j] += z > 0 ? z : 0;
      }
    }
    std::vector<long double> logit(k);
    for (std::size_t m = 0; m < k; ++m) {
      logit[m] = hb[m];
      for (std::size_t j = 0; j < h; ++j) logit[m] += H[m * h + j] * (count > 0 ? pooled[j] / count : 0);
    }
    long double mx = logit[0], se = 0;
    for (auto v : logit) mx = std::max(mx, v);
    for (auto v : logit) se += std::exp(v - mx);
    total += mx + std::log(se) - logit[static_cast<std::size_t>(b.labels[r])];
  }
  return total / static_cast<long double>(b.rows);
}

// Central difference of model_loss at coordinate i.
inline double model_grad(atlas::ParamVector x, const atlas::Batch& b, const atlas::ModelConfig& c, std::size_t i,
                         double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const long double up = model_loss(x, b, c);
  x[i] = x0 - h;
  const long double down = model_loss(x, b, c);
  return static_cast<double>((up - down) / (2.0L * h));
}

// Analytic losses over flat parameter vectors.
struct DoubleWell {
  // (|theta|^2 - 1)^2
  double value(const atlas::ParamVector& x) const {
    double r = 0.0;
    for (double v : x.values()) r += v * v;
    return (r - 1.0) * (r - 1.0);
  }
  std::size_t size() const { return 1; }
  double loss(const atlas::ParamVector& x) const { return value(x); }
  atlas::ParamVector minibatch_gradient(const atlas::ParamVector& x, std::span<const std::size_t>) const {
    double r = 0.0;
    for (double v : x.values()) r += v * v;
    atlas::ParamVector g(x.manifest_ptr());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 4.0 * (r - 1.0) * x[i];
    return g;
  }
  atlas::LossAcc operator()(const atlas::ParamVector& x) const { return {value(x), 0.0}; }
};

struct Bowl {
  // sum c_i (x_i - m_i)^2 with positive c
  std::vector<double> c, m;
  double value(const atlas::ParamVector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += c[i] * (x[i] - m[i]) * (x[i] - m[i]);
    return s;
  }
  atlas::LossAcc operator()(const atlas::ParamVector& x) const { return {value(x), 0.0}; }
};

struct LinearSum {
  std::size_t size() const { return 1; }
  double loss(const atlas::ParamVector& x) const {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return s;
  }
  atlas::ParamVector minibatch_gradient(const atlas::ParamVector& x, std::span<const std::size_t>) const {
    atlas::ParamVector g(x.manifest_ptr());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 1.0;
    return g;
  }
};

struct Constant {
  std::size_t size() const { return 1; }
  double loss(const atlas::ParamVector&) const { return 0.75; }
  atlas::ParamVector minibatch_gradient(const atlas::ParamVector& x, std::span<const std::size_t>) const {
    return atlas::ParamVector(x.manifest_ptr());
  }
};

// Minimum normalized cut over all 2-partitions of a small affinity matrix.
inline std::vector<int> min_ncut(const std::vector<double>& w, std::size_t n) {
  double best = INFINITY;
  std::vector<int> labels(n, 0);
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    if (mask & 1u) continue;  // fix node 0 on side 0 to skip mirrored partitions
    double cut = 0, vol0 = 0, vol1 = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const bool si = mask >> i & 1u, sj = mask >> j & 1u;
        (si ? vol1 : vol0) += w[i * n + j];
        if (si != sj && i < j) cut += w[i * n + j];
      }
    const double ncut = cut / vol0 + cut / vol1;
    if (ncut < best) {
      best = ncut;
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(mask >> i & 1u);
    }
  }
  return labels;
}

// Same partition up to swapping the two names.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  bool same = true, flipped = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i] == b[i];
    flipped = flipped && a[i] != b[i];
  }
  return same || flipped;
}

}  // namespace oracle
