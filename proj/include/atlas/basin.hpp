#pragma once

// Pairwise distance matrices, spectral clustering into basins, and the
// statistics computed over cluster assignments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/connectivity.hpp"
#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"

namespace atlas {

enum class MetricTag { cg, bh, auc, euclidean };

inline std::string to_string(MetricTag m) {
  switch (m) {
    case MetricTag::cg: return "cg";
    case MetricTag::bh: return "bh";
    case MetricTag::auc: return "auc";
    case MetricTag::euclidean: return "euclidean";
  }
  return "?";
}

inline MetricTag metric_from_string(const std::string& s) {
  if (s == "cg") return MetricTag::cg;
  if (s == "bh") return MetricTag::bh;
  if (s == "auc") return MetricTag::auc;
  if (s == "euclidean") return MetricTag::euclidean;
  throw ValidationError("unknown metric '" + s + "' (expected cg|bh|auc|euclidean)");
}

inline double curve_metric(MetricTag m, const LossCurve& c) {
  switch (m) {
    case MetricTag::cg: return convexity_gap(c);
    case MetricTag::bh: return barrier_height(c);
    case MetricTag::auc: return auc(c);
    case MetricTag::euclidean: break;
  }
  throw ValidationError("curve_metric: euclidean is not a curve metric");
}

// ---------------------------------------------------------------------------
// DistanceMatrix

struct DistanceMatrix {
  std::vector<std::string> ids;
  std::vector<double> values;  // row-major n x n
  MetricTag metric = MetricTag::cg;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return ids.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * ids.size() + j]; }

  void validate() const {
    const std::size_t n = ids.size();
    require(values.size() == n * n, "distance matrix: shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      require((*this)(i, i) == 0.0, "distance matrix: nonzero diagonal");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = (*this)(i, j);
        require(std::isfinite(v) && v >= 0.0, "distance matrix: entries must be finite and nonnegative");
        require(std::abs(v - (*this)(j, i)) <= 1e-9, "distance matrix: not symmetric");
      }
    }
  }

  /// Rows and columns reordered so that entry (a, b) of the result is (order[a], order[b]).
  DistanceMatrix permuted(std::span<const std::size_t> order) const {
    require(order.size() == size(), "distance matrix: bad permutation");
    DistanceMatrix out;
    out.metric = metric;
    out.meta = meta;
    out.values.resize(values.size());
    for (std::size_t a = 0; a < order.size(); ++a) out.ids.push_back(ids[order[a]]);
    for (std::size_t a = 0; a < order.size(); ++a)
      for (std::size_t b = 0; b < order.size(); ++b) out(a, b) = (*this)(order[a], order[b]);
    return out;
  }
};

inline std::string matrix_to_csv(const DistanceMatrix& d) {
  std::string out = to_string(d.metric);
  for (const auto& id : d.ids) out += "," + id;
  out += "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += d.ids[i];
    for (std::size_t j = 0; j < d.size(); ++j) out += "," + format_real(d(i, j));
    out += "\n";
  }
  return out;
}

inline DistanceMatrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(s);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  require(static_cast<bool>(std::getline(in, line)), "matrix csv: empty input");
  auto header = split(line);
  require(header.size() >= 2, "matrix csv: header needs at least one id");
  DistanceMatrix d;
  d.metric = metric_from_string(header[0]);
  d.ids.assign(header.begin() + 1, header.end());
  for (std::size_t i = 0; i < d.ids.size(); ++i) {
    require(static_cast<bool>(std::getline(in, line)), "matrix csv: missing rows");
    auto cells = split(line);
    require(cells.size() == d.ids.size() + 1, "matrix csv: row width mismatch");
    require(cells[0] == d.ids[i], "matrix csv: row id '" + cells[0] + "' does not match column id");
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        d.values.push_back(std::stod(cells[j]));
      } catch (const std::exception&) {
        throw ValidationError("matrix csv: bad number '" + cells[j] + "'");
      }
    }
  }
  d.validate();
  return d;
}

struct PairCurve {
  std::size_t i = 0;
  std::size_t j = 0;
  LossCurve curve;
};

struct PairwiseResult {
  DistanceMatrix matrix;
  std::vector<PairCurve> curves;  // ordered by (i, j), empty for euclidean
};

/// One curve per unordered pair (i < j), evaluated by a worker pool; the
/// metric is applied to that single curve and mirrored.
template <PathEvaluator Eval>
PairwiseResult pairwise_matrix(std::span<const ParamVector> models, const std::vector<std::string>& ids,
                               MetricTag metric, std::size_t resolution, const Eval& eval, std::size_t workers,
                               CurveMeta meta = {}) {
  const std::size_t n = models.size();
  require(n >= 2, "pairwise_matrix: need at least 2 checkpoints");
  require(ids.size() == n, "pairwise_matrix: ids/models length mismatch");
  for (std::size_t i = 1; i < n; ++i) require_same_manifest(models[0], models[i], "pairwise_matrix");

  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) jobs.emplace_back(i, j);

  PairwiseResult res;
  res.matrix.ids = ids;
  res.matrix.metric = metric;
  res.matrix.values.assign(n * n, 0.0);
  res.matrix.meta = {{"split", meta.split_id}, {"n_samples", meta.n_samples}, {"eval_seed", meta.eval_seed},
                     {"resolution", metric == MetricTag::euclidean ? 0 : resolution}};
  std::vector<double> out(jobs.size());
  if (metric != MetricTag::euclidean) res.curves.resize(jobs.size());

  parallel_for(jobs.size(), workers, [&](std::size_t q) {
    const auto [i, j] = jobs[q];
    try {
      if (metric == MetricTag::euclidean) {
        out[q] = euclidean_distance(models[i], models[j]);
        return;
      }
      CurveMeta m = meta;
      m.id_a = ids[i];
      m.id_b = ids[j];
      LossCurve c = eval_linear_path(models[i], models[j], resolution, eval, m);
      out[q] = curve_metric(metric, c);
      res.curves[q] = {i, j, std::move(c)};
    } catch (const std::exception& e) {
      throw RuntimeFailure("pairwise_matrix: pair (" + ids[i] + ", " + ids[j] + ") failed: " + e.what());
    }
  });
  for (std::size_t q = 0; q < jobs.size(); ++q) {
    const auto [i, j] = jobs[q];
    res.matrix(i, j) = out[q];
    res.matrix(j, i) = out[q];
  }
  res.matrix.validate();
  return res;
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver (cyclic Jacobi)

struct EigenResult {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // n x n, column c is the eigenvector of values[c]
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi rotations until every off-diagonal entry is below tol. Each
/// eigenvector's largest-magnitude component (first one on ties) is made positive.
inline EigenResult symmetric_eigen(std::vector<double> a, std::size_t n, double tol = 1e-12,
                                   std::size_t max_sweeps = 100) {
  require(a.size() == n * n, "symmetric_eigen: shape mismatch");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  auto off_max = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m = std::max(m, std::abs(at(i, j)));
    return m;
  };
  EigenResult r;
  while (off_max() >= tol) {
    require(r.sweeps < max_sweeps, "symmetric_eigen: no convergence");
    ++r.sweeps;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return at(x, x) < at(y, y); });
  r.values.resize(n);
  r.vectors.assign(n * n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    r.values[c] = at(src, src);
    std::size_t big = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v[k * n + src]) > std::abs(v[big * n + src])) big = k;
    const double sign = v[big * n + src] < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) r.vectors[k * n + c] = sign * v[k * n + src];
  }
  return r;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline KMeansResult kmeans_once(const std::vector<std::vector<double>>& pts, std::size_t k, Rng& rng) {
  const std::size_t n = pts.size();
  KMeansResult r;
  r.centroids.push_back(pts[uniform_index(rng, n)]);
  std::vector<double> d2(n);
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centroids) d2[i] = std::min(d2[i], sq_dist(pts[i], c));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
    } else {
      pick = uniform_index(rng, n);
    }
    r.centroids.push_back(pts[pick]);
  }
  r.labels.assign(n, -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(pts[i], r.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(pts[i], r.centroids[c]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(pts[0].size(), 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (r.labels[i] == static_cast<int>(c)) {
          for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += pts[i][d];
          ++cnt;
        }
      if (cnt == 0) continue;
      for (auto& s : sum) s /= static_cast<double>(cnt);
      r.centroids[c] = std::move(sum);
    }
  }
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist(pts[i], r.centroids[static_cast<std::size_t>(r.labels[i])]);
  return r;
}

}  // namespace detail

/// k-means++ seeding, Lloyd iterations, best inertia over restarts (first wins ties).
/// Labels are then renumbered: larger clusters first, ties by smallest member index.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& pts, std::size_t k, std::uint64_t seed,
                           std::size_t restarts = 10) {
  require(!pts.empty(), "kmeans: no points");
  require(k >= 1 && k <= pts.size(), "kmeans: need 1 <= k <= n");
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(derive_seed(seed, tag_of("kmeans")), r));
    auto cur = detail::kmeans_once(pts, k, rng);
    if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
  }
  std::vector<std::size_t> size(k, 0), first(k, pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto c = static_cast<std::size_t>(best.labels[i]);
    ++size[c];
    first[c] = std::min(first[c], i);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (size[a] != size[b]) return size[a] > size[b];
    return first[a] < first[b];
  });
  std::vector<int> rename(k);
  std::vector<std::vector<double>> cents;
  for (std::size_t r = 0; r < k; ++r) {
    rename[order[r]] = static_cast<int>(r);
    cents.push_back(best.centroids[order[r]]);
  }
  for (auto& l : best.labels) l = rename[static_cast<std::size_t>(l)];
  best.centroids = std::move(cents);
  return best;
}

// ---------------------------------------------------------------------------
// Spectral clustering

struct ClusterReport {
  std::size_t k = 2;
  double sigma = 0.0;
  bool degenerate = false;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> embedding;
  std::vector<double> eigenvalues;
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  std::vector<double> features;
  std::uint64_t seed = 0;

  std::size_t cluster_size(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// ||w - c1|| - ||w - c2|| for every embedded point.
inline std::vector<double> centroid_features(const std::vector<std::vector<double>>& embedding,
                                             const std::vector<double>& c1, const std::vector<double>& c2) {
  std::vector<double> f;
  for (const auto& w : embedding) f.push_back(std::sqrt(detail::sq_dist(w, c1)) - std::sqrt(detail::sq_dist(w, c2)));
  return f;
}

/// Gaussian affinity (bandwidth = median off-diagonal distance), symmetric
/// normalized Laplacian, row-normalized embedding from its k smallest
/// eigenvectors, then k-means in that embedding.
inline ClusterReport spectral_cluster(const DistanceMatrix& d, std::size_t k, std::uint64_t seed) {
  d.validate();
  const std::size_t n = d.size();
  require(k >= 2 && k < n, "spectral_cluster: need 2 <= k < N");
  ClusterReport rep;
  rep.k = k;
  rep.seed = seed;
  rep.ids = d.ids;

  std::vector<double> off;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) off.push_back(d(i, j));
  rep.sigma = median(off);
  if (rep.sigma == 0.0) {
    rep.degenerate = true;
    rep.labels.assign(n, 0);
    rep.embedding.assign(n, std::vector<double>(k, 0.0));
    rep.centroids.assign(1, std::vector<double>(k, 0.0));
    rep.features.assign(n, 0.0);
    return rep;
  }

  std::vector<double> w(n * n, 0.0), deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double x = d(i, j) / rep.sigma;
      w[i * n + j] = std::exp(-0.5 * x * x);
      deg[i] += w[i * n + j];
    }
  std::vector<double> lap(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double norm_ij = (deg[i] > 0 && deg[j] > 0) ? w[i * n + j] / std::sqrt(deg[i] * deg[j]) : 0.0;
      lap[i * n + j] = (i == j ? (deg[i] > 0 ? 1.0 : 0.0) : 0.0) - norm_ij;
    }
  const auto eig = symmetric_eigen(lap, n);
  rep.eigenvalues = eig.values;
  rep.embedding.assign(n, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double len = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      rep.embedding[i][c] = eig.vectors[i * n + c];
      len += rep.embedding[i][c] * rep.embedding[i][c];
    }
    len = std::sqrt(len);
    if (len > 0)
      for (auto& x : rep.embedding[i]) x /= len;
  }
  auto km = kmeans(rep.embedding, k, seed);
  rep.labels = std::move(km.labels);
  rep.centroids = std::move(km.centroids);
  rep.features = centroid_features(rep.embedding, rep.centroids[0], rep.centroids[1]);
  return rep;
}

inline nlohmann::json to_json(const ClusterReport& r) {
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    models.push_back({{"id", r.ids[i]}, {"label", r.labels[i]}, {"feature", r.features[i]},
                      {"embedding", r.embedding[i]}});
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < (r.degenerate ? 1 : r.k); ++c) sizes.push_back(r.cluster_size(static_cast<int>(c)));
  return {{"k", r.k},
          {"sigma", r.sigma},
          {"degenerate", r.degenerate},
          {"seed", r.seed},
          {"eigenvalues", r.eigenvalues},
          {"centroids", r.centroids},
          {"cluster_sizes", sizes},
          {"models", models}};
}

inline ClusterReport cluster_report_from_json(const nlohmann::json& j) {
  ClusterReport r;
  r.k = j.at("k").get<std::size_t>();
  r.sigma = j.at("sigma").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  r.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  for (const auto& m : j.at("models")) {
    r.ids.push_back(m.at("id").get<std::string>());
    r.labels.push_back(m.at("label").get<int>());
    r.features.push_back(m.at("feature").get<double>());
    r.embedding.push_back(m.at("embedding").get<std::vector<double>>());
  }
  return r;
}

/// Medians of the matrix entries split by whether the pair shares a label.
struct SeparationSummary {
  double within_median = 0.0;
  double between_median = 0.0;
  std::size_t within_pairs = 0;
  std::size_t between_pairs = 0;
};

inline SeparationSummary separation(const DistanceMatrix& d, const std::vector<int>& labels) {
  require(labels.size() == d.size(), "separation: labels/matrix size mismatch");
  std::vector<double> within, between;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) (labels[i] == labels[j] ? within : between).push_back(d(i, j));
  require(!within.empty() && !between.empty(), "separation: need pairs within and between clusters");
  return {median(within), median(between), within.size(), between.size()};
}

// ---------------------------------------------------------------------------
// Correlation and regression

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> r;
};

inline std::optional<LinearFit> least_squares_fit(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "least_squares_fit: length mismatch");
  require(x.size() >= 2, "least_squares_fit: need at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) return std::nullopt;
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r = pearson(x, y);
  return f;
}

/// Rows are models, columns are splits; returns the column-by-column Pearson
/// matrix. Entries involving a zero-variance column are empty.
struct CorrelationMatrix {
  std::vector<std::string> splits;
  std::vector<std::optional<double>> values;
  std::vector<std::string> flagged;

  std::optional<double> operator()(std::size_t i, std::size_t j) const { return values[i * splits.size() + j]; }
};

inline CorrelationMatrix correlation_matrix(const std::vector<std::vector<double>>& acc,
                                            const std::vector<std::string>& splits) {
  require(acc.size() >= 3, "correlation_matrix: need at least 3 models");
  require(splits.size() >= 2, "correlation_matrix: need at least 2 splits");
  for (const auto& row : acc) require(row.size() == splits.size(), "correlation_matrix: ragged accuracy table");
  const std::size_t s = splits.size();
  std::vector<std::vector<double>> cols(s);
  for (const auto& row : acc)
    for (std::size_t c = 0; c < s; ++c) cols[c].push_back(row[c]);
  CorrelationMatrix m;
  m.splits = splits;
  m.values.resize(s * s);
  for (std::size_t c = 0; c < s; ++c) {
    const bool flat = std::all_of(cols[c].begin(), cols[c].end(), [&](double v) { return v == cols[c][0]; });
    if (flat) m.flagged.push_back(splits[c]);
  }
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = 0; b < s; ++b) {
      if (a == b) {
        const bool flat = std::find(m.flagged.begin(), m.flagged.end(), splits[a]) != m.flagged.end();
        m.values[a * s + b] = flat ? std::nullopt : std::optional<double>(1.0);
      } else {
        m.values[a * s + b] = pearson(cols[a], cols[b]);
      }
    }
  return m;
}

inline nlohmann::json to_json(const CorrelationMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t a = 0; a < m.splits.size(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t b = 0; b < m.splits.size(); ++b) {
      const auto v = m(a, b);
      row.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    }
    rows.push_back(row);
  }
  return {{"splits", m.splits}, {"matrix", rows}, {"zero_variance", m.flagged}};
}

// ---------------------------------------------------------------------------
// Cluster statistics

struct StatsReport {
  std::size_t n1 = 0, n2 = 0;
  double mu1 = 0.0, sigma1 = 0.0;
  double mu2 = 0.0, sigma2 = 0.0;
  double max2 = 0.0;
  std::optional<double> mean_ratio;  // (mu1 - mu2) / sigma1
  std::optional<double> max_ratio;   // (mu1 - max over C2) / sigma1
};

/// Ratios from summary numbers alone; C1 is the larger cluster.
inline StatsReport stats_from_summary(double mu1, double sigma1, double mu2, double max2) {
  require(sigma1 >= 0.0, "cluster_stats: sigma must be nonnegative");
  StatsReport s;
  s.mu1 = mu1;
  s.sigma1 = sigma1;
  s.mu2 = mu2;
  s.max2 = max2;
  if (sigma1 > 0.0) {
    s.mean_ratio = (mu1 - mu2) / sigma1;
    s.max_ratio = (mu1 - max2) / sigma1;
  }
  return s;
}

/// Population mean and std per cluster (label 0 = C1, label 1 = C2).
inline StatsReport cluster_stats(const std::vector<int>& labels, std::span<const double> values) {
  require(labels.size() == values.size(), "cluster_stats: labels/values length mismatch");
  std::vector<double> c1, c2;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "cluster_stats: labels must be 0 or 1");
    (labels[i] == 0 ? c1 : c2).push_back(values[i]);
  }
  require(!c1.empty() && !c2.empty(), "cluster_stats: empty cluster");
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto pstd = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  StatsReport s = stats_from_summary(mean(c1), pstd(c1), mean(c2), *std::max_element(c2.begin(), c2.end()));
  s.n1 = c1.size();
  s.n2 = c2.size();
  s.sigma2 = pstd(c2);
  return s;
}

inline nlohmann::json to_json(const StatsReport& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  // the table reports ratios to two decimals
  auto two_dp = [](const std::optional<double>& v) {
    return v ? nlohmann::json(std::round(*v * 100.0) / 100.0) : nlohmann::json(nullptr);
  };
  return {{"C1", {{"n", s.n1}, {"mean", s.mu1}, {"std", s.sigma1}}},
          {"C2", {{"n", s.n2}, {"mean", s.mu2}, {"std", s.sigma2}, {"max", s.max2}}},
          {"mean_ratio", opt(s.mean_ratio)},
          {"max_ratio", opt(s.max_ratio)},
          {"mean_ratio_2dp", two_dp(s.mean_ratio)},
          {"max_ratio_2dp", two_dp(s.max_ratio)},
          {"ratios_defined", s.mean_ratio.has_value()}};
}

// ---------------------------------------------------------------------------
// Dynamics across checkpoint stages

struct DynamicsReport {
  std::vector<std::string> ids;
  std::vector<std::string> stage_names;
  std::vector<ClusterReport> stages;
  std::vector<std::vector<int>> aligned_labels;      // [stage][model]
  std::vector<std::vector<int>> alignment;           // [stage][raw label] -> aligned label
  std::vector<std::vector<double>> trajectories;     // [model][stage], sign follows aligned labels
  std::vector<bool> solidifying;                     // |feature| non-decreasing across stages
};

namespace detail {

// Permutation of raw labels maximizing agreement with prev; lexicographically
// first permutation wins ties.
inline std::vector<int> best_alignment(const std::vector<int>& prev, const std::vector<int>& cur, std::size_t k) {
  std::vector<int> perm(k), best;
  std::iota(perm.begin(), perm.end(), 0);
  long best_score = -1;
  do {
    long score = 0;
    for (std::size_t i = 0; i < cur.size(); ++i) score += perm[static_cast<std::size_t>(cur[i])] == prev[i];
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace detail

/// Clusters every stage on its own, then renames each stage's labels to
/// overlap the previous stage as much as possible.
inline DynamicsReport dynamics(const std::vector<DistanceMatrix>& stage_matrices,
                               const std::vector<std::string>& stage_names, std::size_t k, std::uint64_t seed) {
  require(!stage_matrices.empty(), "dynamics: no stages");
  require(stage_names.size() == stage_matrices.size(), "dynamics: stage names/matrices mismatch");
  require(k <= 8, "dynamics: k too large for exhaustive alignment");
  DynamicsReport rep;
  rep.ids = stage_matrices[0].ids;
  rep.stage_names = stage_names;
  for (std::size_t s = 0; s < stage_matrices.size(); ++s) {
    for (const auto& id : rep.ids)
      require(std::find(stage_matrices[s].ids.begin(), stage_matrices[s].ids.end(), id) != stage_matrices[s].ids.end(),
              "dynamics: run '" + id + "' missing at stage " + stage_names[s]);
    require(stage_matrices[s].ids.size() == rep.ids.size(), "dynamics: run sets differ between stages");
  }
  const std::size_t n = rep.ids.size();
  for (std::size_t s = 0; s < stage_matrices.size(); ++s) {
    // reorder to the stage-0 id order
    std::vector<std::size_t> order;
    for (const auto& id : rep.ids)
      order.push_back(static_cast<std::size_t>(
          std::find(stage_matrices[s].ids.begin(), stage_matrices[s].ids.end(), id) - stage_matrices[s].ids.begin()));
    ClusterReport cr = spectral_cluster(stage_matrices[s].permuted(order), k, seed);
    std::vector<int> map(k);
    std::iota(map.begin(), map.end(), 0);
    if (s > 0 && !cr.degenerate) map = detail::best_alignment(rep.aligned_labels.back(), cr.labels, k);
    std::vector<int> aligned(n);
    for (std::size_t i = 0; i < n; ++i) aligned[i] = map[static_cast<std::size_t>(cr.labels[i])];
    rep.alignment.push_back(map);
    rep.aligned_labels.push_back(aligned);
    rep.stages.push_back(std::move(cr));
  }
  rep.trajectories.assign(n, {});
  for (std::size_t s = 0; s < rep.stages.size(); ++s) {
    const auto& cr = rep.stages[s];
    std::vector<double> f(n, 0.0);
    if (!cr.degenerate) {
      // centroid of aligned label 0 first, so the sign means the same thing at every stage
      std::vector<std::size_t> raw_of(k);
      for (std::size_t raw = 0; raw < k; ++raw) raw_of[static_cast<std::size_t>(rep.alignment[s][raw])] = raw;
      f = centroid_features(cr.embedding, cr.centroids[raw_of[0]], cr.centroids[raw_of[1]]);
    }
    for (std::size_t i = 0; i < n; ++i) rep.trajectories[i].push_back(f[i]);
  }
  for (const auto& t : rep.trajectories) {
    bool mono = true;
    for (std::size_t s = 1; s < t.size(); ++s) mono = mono && std::abs(t[s]) >= std::abs(t[s - 1]);
    rep.solidifying.push_back(mono);
  }
  return rep;
}

inline nlohmann::json to_json(const DynamicsReport& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t s = 0; s < r.stages.size(); ++s)
    stages.push_back({{"name", r.stage_names[s]},
                      {"alignment", r.alignment[s]},
                      {"aligned_labels", r.aligned_labels[s]},
                      {"cluster", to_json(r.stages[s])}});
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    std::vector<int> labels;
    for (const auto& a : r.aligned_labels) labels.push_back(a[i]);
    runs.push_back({{"id", r.ids[i]}, {"trajectory", r.trajectories[i]}, {"labels", labels},
                    {"solidifying", static_cast<bool>(r.solidifying[i])}});
  }
  return {{"stages", stages}, {"runs", runs}};
}

}  // namespace atlas
