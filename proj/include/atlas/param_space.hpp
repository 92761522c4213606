#pragma once

// Weight-space geometry: a model is a point in R^n described by a manifest of
// named tensors. All arithmetic here is in 64-bit reals.

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atlas/error.hpp"

namespace atlas {

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }
  bool operator==(const TensorSpec&) const = default;
};

/// Ordered list of named tensors. The order is canonical for a given architecture.
class ShapeManifest {
 public:
  ShapeManifest() = default;

  explicit ShapeManifest(std::vector<TensorSpec> tensors) : tensors_(std::move(tensors)) {
    std::unordered_set<std::string> seen;
    offsets_.reserve(tensors_.size());
    for (const auto& t : tensors_) {
      require(!t.name.empty(), "manifest: empty tensor name");
      require(seen.insert(t.name).second, "manifest: duplicate tensor name '" + t.name + "'");
      require(!t.shape.empty(), "manifest: tensor '" + t.name + "' has no dimensions");
      for (auto d : t.shape) require(d > 0, "manifest: tensor '" + t.name + "' has a zero dimension");
      offsets_.push_back(total_);
      total_ += t.size();
    }
    require(total_ > 0, "manifest: total length must be positive");
  }

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total_len() const { return total_; }
  std::size_t offset(std::size_t index) const { return offsets_.at(index); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return i;
    throw ValidationError("manifest: no tensor named '" + name + "'");
  }

  bool contains(const std::string& name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return true;
    return false;
  }

  bool operator==(const ShapeManifest& o) const { return tensors_ == o.tensors_; }

 private:
  std::vector<TensorSpec> tensors_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

using ManifestPtr = std::shared_ptr<const ShapeManifest>;

/// A point in parameter space. Copies are deep for values and share the manifest.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(ManifestPtr manifest)
      : manifest_(std::move(manifest)), values_(manifest_->total_len(), 0.0) {}

  ParamVector(ManifestPtr manifest, std::vector<double> values)
      : manifest_(std::move(manifest)), values_(std::move(values)) {
    require(values_.size() == manifest_->total_len(), "param vector: length does not match manifest");
  }

  const ShapeManifest& manifest() const { return *manifest_; }
  const ManifestPtr& manifest_ptr() const { return manifest_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> tensor(const std::string& name) const {
    const auto i = manifest_->index_of(name);
    return std::span<const double>(values_).subspan(manifest_->offset(i), manifest_->tensors()[i].size());
  }
  std::span<double> tensor(const std::string& name) {
    const auto i = manifest_->index_of(name);
    return std::span<double>(values_).subspan(manifest_->offset(i), manifest_->tensors()[i].size());
  }

  bool same_manifest(const ParamVector& o) const {
    return manifest_ == o.manifest_ || (manifest_ && o.manifest_ && *manifest_ == *o.manifest_);
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const ParamVector& o) const { return same_manifest(o) && values_ == o.values_; }

 private:
  ManifestPtr manifest_;
  std::vector<double> values_;
};

inline void require_same_manifest(const ParamVector& a, const ParamVector& b, const char* where) {
  if (!a.same_manifest(b)) throw ValidationError(std::string(where) + ": manifest mismatch");
}

/// Weights (w_a, w_b) used for alpha*a + (1-alpha)*b. The smaller weight is
/// derived from the larger one, which is exact in binary floating point, so the
/// pair sums to one and swapping endpoints with alpha -> 1-alpha reproduces the
/// same weights bit for bit.
inline std::pair<double, double> interpolation_weights(double alpha) {
  if (alpha >= 0.5) return {alpha, 1.0 - alpha};
  const double wb = 1.0 - alpha;
  return {1.0 - wb, wb};
}

/// alpha*a + (1-alpha)*b; alpha=1 gives a, alpha=0 gives b.
inline ParamVector interpolate(const ParamVector& a, const ParamVector& b, double alpha) {
  require_same_manifest(a, b, "interpolate");
  require(alpha >= 0.0 && alpha <= 1.0, "interpolate: alpha outside [0,1]");
  const auto [wa, wb] = interpolation_weights(alpha);
  ParamVector out(a.manifest_ptr());
  auto x = a.values();
  auto y = b.values();
  auto o = out.values();
  // shared coordinates stay put, so identical endpoints give an identical path
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] == y[i] ? x[i] : wa * x[i] + wb * y[i];
  return out;
}

inline ParamVector convex_combine(std::span<const ParamVector> points, std::span<const double> weights) {
  require(!points.empty(), "convex_combine: no points");
  require(points.size() == weights.size(), "convex_combine: points/weights length mismatch");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "convex_combine: negative weight");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, "convex_combine: weights must sum to 1");
  ParamVector out(points[0].manifest_ptr());
  auto o = out.values();
  for (std::size_t k = 0; k < points.size(); ++k) {
    require_same_manifest(points[0], points[k], "convex_combine");
    if (weights[k] == 0.0) continue;
    auto p = points[k].values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += weights[k] * p[i];
  }
  return out;
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  require_same_manifest(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline double euclidean_distance(const ParamVector& a, const ParamVector& b) {
  require_same_manifest(a, b, "euclidean_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  require_same_manifest(a, b, "subtract");
  ParamVector out(a.manifest_ptr());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  require_same_manifest(a, b, "add");
  ParamVector out(a.manifest_ptr());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector operator*(double s, const ParamVector& a) {
  ParamVector out(a.manifest_ptr());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

/// y += s * x
inline void axpy(double s, const ParamVector& x, ParamVector& y) {
  require_same_manifest(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

/// Convenience for tests and analytic losses: a single flat tensor named "theta".
inline ParamVector flat_params(std::vector<double> values) {
  auto manifest = std::make_shared<const ShapeManifest>(
      std::vector<TensorSpec>{{"theta", {values.size()}}});
  return ParamVector(std::move(manifest), std::move(values));
}

}  // namespace atlas
