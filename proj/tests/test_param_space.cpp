#include <catch_amalgamated.hpp>

#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"

using namespace atlas;

namespace {

ManifestPtr two_tensors() {
  return std::make_shared<const ShapeManifest>(std::vector<TensorSpec>{{"w", {2, 3}}, {"b", {3}}});
}

ParamVector random_params(const ManifestPtr& m, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector p(m);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = standard_normal(rng);
  return p;
}

}  // namespace

TEST_CASE("manifest offsets follow declaration order") {
  auto m = two_tensors();
  REQUIRE(m->total_len() == 9);
  REQUIRE(m->index_of("b") == 1);
  ParamVector p(m);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(i);
  REQUIRE(p.tensor("b")[0] == 6.0);
  REQUIRE(p.tensor("w").size() == 6);
}

TEST_CASE("manifest rejects duplicate names and zero dims") {
  REQUIRE_THROWS_AS(ShapeManifest({{"a", {2}}, {"a", {3}}}), ValidationError);
  REQUIRE_THROWS_AS(ShapeManifest({{"a", {2, 0}}}), ValidationError);
}

TEST_CASE("interpolate hits the endpoints exactly") {
  auto m = two_tensors();
  auto a = random_params(m, 1), b = random_params(m, 2);
  REQUIRE(interpolate(a, b, 1.0) == a);
  REQUIRE(interpolate(a, b, 0.0) == b);
}

TEST_CASE("interpolate is symmetric under swapping endpoints bit for bit") {
  auto m = two_tensors();
  auto a = random_params(m, 3), b = random_params(m, 4);
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const double alpha = uniform01(rng);
    REQUIRE(interpolate(a, b, alpha) == interpolate(b, a, 1.0 - alpha));
  }
}

TEST_CASE("interpolate checks manifests and alpha") {
  auto a = random_params(two_tensors(), 1);
  auto other = flat_params({1, 2, 3, 4, 5, 6, 7, 8, 9});
  REQUIRE_THROWS_AS(interpolate(a, other, 0.5), ValidationError);
  REQUIRE_THROWS_AS(interpolate(a, a, 1.5), ValidationError);
}

TEST_CASE("convex_combine validates weights") {
  auto m = two_tensors();
  std::vector<ParamVector> pts{random_params(m, 1), random_params(m, 2)};
  REQUIRE_THROWS_AS(convex_combine(pts, std::vector<double>{0.7, 0.7}), ValidationError);
  REQUIRE_THROWS_AS(convex_combine(pts, std::vector<double>{1.5, -0.5}), ValidationError);
  const auto mid = convex_combine(pts, std::vector<double>{0.5, 0.5});
  for (std::size_t i = 0; i < mid.size(); ++i) REQUIRE(mid[i] == Catch::Approx(0.5 * (pts[0][i] + pts[1][i])));
}

TEST_CASE("euclidean distance matches the norm of the difference") {
  auto m = two_tensors();
  auto a = random_params(m, 5), b = random_params(m, 6);
  REQUIRE(euclidean_distance(a, b) == Catch::Approx(norm(a - b)).epsilon(1e-14));
  REQUIRE(euclidean_distance(a, a) == 0.0);
}

TEST_CASE("derived seeds are stable and distinct") {
  REQUIRE(derive_seed(1, tag_of("x")) == derive_seed(1, tag_of("x")));
  REQUIRE(derive_seed(1, tag_of("x")) != derive_seed(1, tag_of("y")));
  REQUIRE(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("flat dirichlet weights are nonnegative and sum to one") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto w = flat_dirichlet(5, rng);
    double s = 0.0;
    for (double x : w) {
      REQUIRE(x >= 0.0);
      s += x;
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("sample_without_replacement returns distinct indices") {
  Rng rng(12);
  auto idx = sample_without_replacement(100, 40, rng);
  std::sort(idx.begin(), idx.end());
  REQUIRE(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  REQUIRE(idx.back() < 100);
}
