#include <catch_amalgamated.hpp>

#include "atlas/basin.hpp"
#include "oracles.hpp"

using namespace atlas;

namespace {

DistanceMatrix block_matrix(const std::vector<int>& groups, double within, double between, double noise = 0.0,
                            std::uint64_t seed = 0) {
  const std::size_t n = groups.size();
  DistanceMatrix d;
  for (std::size_t i = 0; i < n; ++i) d.ids.push_back("m" + std::to_string(i));
  d.values.assign(n * n, 0.0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (groups[i] == groups[j] ? within : between) + noise * uniform01(rng);
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

std::vector<double> gaussian_affinity(const DistanceMatrix& d) {
  std::vector<double> off;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) off.push_back(d(i, j));
  std::nth_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(off.size() / 2), off.end());
  const double s = off[off.size() / 2];  // odd count in every use below
  std::vector<double> w(d.values.size(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j)
      if (i != j) w[i * d.size() + j] = std::exp(-d(i, j) * d(i, j) / (2 * s * s));
  return w;
}

}  // namespace

TEST_CASE("two-block matrix splits like the exhaustive normalized cut") {
  const std::vector<int> groups{0, 1, 0, 0, 1, 1};
  const auto d = block_matrix(groups, 0.01, 1.0);
  const auto rep = spectral_cluster(d, 2, 1);
  REQUIRE(oracle::same_partition(rep.labels, groups));
  REQUIRE(oracle::same_partition(rep.labels, oracle::min_ncut(gaussian_affinity(d), 6)));
}

TEST_CASE("noisy block matrices agree with the normalized cut oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    std::vector<int> groups(7);
    // blocks of two or more; an isolated model has Laplacian eigenvalue 1, where
    // the relaxation and the exact cut legitimately part ways
    do {
      for (auto& g : groups) g = static_cast<int>(uniform_index(rng, 2));
    } while (std::count(groups.begin(), groups.end(), 0) < 2 || std::count(groups.begin(), groups.end(), 1) < 2);
    const auto d = block_matrix(groups, 0.05, 0.8, 0.2, seed);
    const auto rep = spectral_cluster(d, 2, seed);
    REQUIRE(oracle::same_partition(rep.labels, oracle::min_ncut(gaussian_affinity(d), 7)));
  }
}

TEST_CASE("permuting the models permutes the labels") {
  const std::vector<int> groups{0, 1, 0, 0, 1, 1, 0};
  const auto d = block_matrix(groups, 0.1, 0.9, 0.3, 4);
  const auto rep = spectral_cluster(d, 2, 3);
  const std::vector<std::size_t> order{6, 2, 4, 0, 1, 5, 3};
  const auto prep = spectral_cluster(d.permuted(order), 2, 3);
  for (std::size_t a = 0; a < order.size(); ++a) {
    REQUIRE(prep.labels[a] == rep.labels[order[a]]);
    REQUIRE(prep.features[a] == Catch::Approx(rep.features[order[a]]).margin(1e-9));
  }
}

TEST_CASE("label 0 is the larger cluster and features split by sign") {
  const std::vector<int> groups{1, 1, 0, 1, 1, 0, 1};
  const auto rep = spectral_cluster(block_matrix(groups, 0.02, 1.0), 2, 0);
  REQUIRE(rep.cluster_size(0) == 5);
  for (std::size_t i = 0; i < groups.size(); ++i) REQUIRE((rep.labels[i] == 0) == (rep.features[i] < 0));
}

TEST_CASE("all-zero distances give a degenerate report and equal distances are deterministic") {
  DistanceMatrix z = block_matrix({0, 0, 0, 0}, 0.0, 0.0);
  const auto rep = spectral_cluster(z, 2, 0);
  REQUIRE(rep.degenerate);
  REQUIRE(rep.labels == std::vector<int>(4, 0));
  const auto flat = block_matrix({0, 0, 0, 0, 0}, 0.5, 0.5);
  REQUIRE(spectral_cluster(flat, 2, 9).labels == spectral_cluster(flat, 2, 9).labels);
  REQUIRE_THROWS_AS(spectral_cluster(flat, 5, 0), ValidationError);
}

TEST_CASE("jacobi eigensolver reconstructs the matrix") {
  Rng rng(2);
  const std::size_t n = 6;
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) a[i * n + j] = a[j * n + i] = standard_normal(rng);
  const auto e = symmetric_eigen(a, n);
  REQUIRE(std::is_sorted(e.values.begin(), e.values.end()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0, orth = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        s += e.vectors[i * n + c] * e.values[c] * e.vectors[j * n + c];
        orth += e.vectors[c * n + i] * e.vectors[c * n + j];
      }
      REQUIRE(s == Catch::Approx(a[i * n + j]).margin(1e-10));
      REQUIRE(orth == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
    }
}

TEST_CASE("pairwise cg on a 1-d double well matches hand-computed chords") {
  oracle::DoubleWell well;
  const std::vector<ParamVector> models{flat_params({-1.0}), flat_params({1.0}), flat_params({0.5})};
  const auto res = pairwise_matrix(models, {"a", "b", "c"}, MetricTag::cg, 11, well, 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) {
        REQUIRE(res.matrix(i, j) == 0.0);
        continue;
      }
      const std::size_t lo = std::min(i, j), hi = std::max(i, j);
      std::vector<double> al, ls;
      for (int k = 0; k <= 10; ++k) {
        const double t = k / 10.0;
        const double x = t * models[lo][0] + (1 - t) * models[hi][0];
        al.push_back(t);
        ls.push_back((x * x - 1) * (x * x - 1));
      }
      REQUIRE(res.matrix(i, j) == Catch::Approx(oracle::convexity_gap(al, ls)).margin(1e-12));
    }
  REQUIRE(res.matrix(0, 1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("duplicate checkpoints are at distance zero under every metric") {
  oracle::DoubleWell well;
  const std::vector<ParamVector> models{flat_params({0.3, 0.2}), flat_params({0.3, 0.2})};
  for (auto m : {MetricTag::cg, MetricTag::bh, MetricTag::auc, MetricTag::euclidean})
    REQUIRE(pairwise_matrix(models, {"a", "b"}, m, 11, well, 1).matrix(0, 1) == 0.0);
}

TEST_CASE("pairwise output does not depend on the worker count") {
  oracle::DoubleWell well;
  Rng rng(6);
  std::vector<ParamVector> models;
  std::vector<std::string> ids;
  for (int i = 0; i < 9; ++i) {
    models.push_back(flat_params({uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5)}));
    ids.push_back("m" + std::to_string(i));
  }
  const auto one = matrix_to_csv(pairwise_matrix(models, ids, MetricTag::cg, 11, well, 1).matrix);
  const auto many = matrix_to_csv(pairwise_matrix(models, ids, MetricTag::cg, 11, well, 8).matrix);
  REQUIRE(one == many);
}

TEST_CASE("matrix csv round trip") {
  auto d = block_matrix({0, 1, 0}, 1.0 / 3.0, 0.7);
  d.metric = MetricTag::bh;
  const auto back = matrix_from_csv(matrix_to_csv(d));
  REQUIRE(back.ids == d.ids);
  REQUIRE(back.values == d.values);
  REQUIRE(back.metric == MetricTag::bh);
  auto bad = d;
  bad(0, 1) = 2.0;
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("pearson and least squares") {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{3, 5, 7, 9, 11}, neg{-1, -2, -3, -4, -5}, flat{2, 2, 2, 2, 2};
  REQUIRE(*pearson(x, y) == Catch::Approx(1.0));
  REQUIRE(*pearson(x, neg) == Catch::Approx(-1.0));
  REQUIRE_FALSE(pearson(x, flat).has_value());
  const auto fit = least_squares_fit(x, y);
  REQUIRE(fit->slope == Catch::Approx(2.0));
  REQUIRE(fit->intercept == Catch::Approx(1.0));
  REQUIRE_FALSE(least_squares_fit(flat, x).has_value());
}

TEST_CASE("table ratios from summary numbers") {
  const auto s = stats_from_summary(0.844, 0.002, 0.839, 0.842);
  REQUIRE(std::round(*s.mean_ratio * 100.0) / 100.0 == 2.5);
  REQUIRE(std::round(*s.max_ratio * 100.0) / 100.0 == 1.0);
  REQUIRE_FALSE(stats_from_summary(0.5, 0.0, 0.4, 0.4).mean_ratio.has_value());
}

TEST_CASE("cluster stats use the population deviation") {
  const std::vector<int> labels{0, 0, 0, 1};
  const std::vector<double> v{0.8, 0.9, 1.0, 0.5};
  const auto s = cluster_stats(labels, v);
  REQUIRE(s.mu1 == Catch::Approx(0.9));
  REQUIRE(s.sigma1 == Catch::Approx(std::sqrt(0.02 / 3.0)));
  REQUIRE(*s.mean_ratio == Catch::Approx(*s.max_ratio));  // singleton second cluster
  const std::vector<double> same{0.5, 0.7, 0.5, 0.7};
  REQUIRE(*cluster_stats({0, 0, 1, 1}, same).mean_ratio == 0.0);
  REQUIRE_THROWS_AS(cluster_stats({0, 0}, std::vector<double>{1, 2}), ValidationError);
}

TEST_CASE("correlation matrix") {
  Rng rng(8);
  std::vector<std::vector<double>> acc;
  for (int m = 0; m < 50; ++m) {
    const double a = uniform01(rng), b = uniform01(rng);
    acc.push_back({a, a, 1.0 - a, b, 0.5});
  }
  const auto c = correlation_matrix(acc, {"a", "dup", "neg", "indep", "flat"});
  REQUIRE(*c(0, 1) == Catch::Approx(1.0));
  REQUIRE(*c(0, 2) == Catch::Approx(-1.0));
  REQUIRE(std::abs(*c(0, 3)) < 0.5);
  REQUIRE(*c(3, 3) == 1.0);
  REQUIRE(c(0, 4) == std::nullopt);
  REQUIRE(c.flagged == std::vector<std::string>{"flat"});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) REQUIRE(*c(i, j) == *c(j, i));
}

TEST_CASE("dynamics keeps identical stages identical") {
  const auto d = block_matrix({0, 1, 0, 0, 1, 1, 0}, 0.1, 0.9, 0.2, 3);
  const auto rep = dynamics({d, d, d}, {"s1", "s2", "s3"}, 2, 0);
  REQUIRE(rep.aligned_labels[0] == rep.aligned_labels[1]);
  REQUIRE(rep.aligned_labels[1] == rep.aligned_labels[2]);
}

TEST_CASE("alignment undoes a label swap between stages") {
  const std::vector<int> prev{0, 0, 1, 1, 1}, cur{1, 1, 0, 0, 0};
  const auto map = detail::best_alignment(prev, cur, 2);
  for (std::size_t i = 0; i < prev.size(); ++i) REQUIRE(map[static_cast<std::size_t>(cur[i])] == prev[i]);
}

TEST_CASE("reordered stage matrices align back to stage ids") {
  const std::vector<int> groups{0, 0, 1, 0, 1, 1, 0};
  const auto d = block_matrix(groups, 0.1, 0.9, 0.2, 5);
  const auto shuffled = d.permuted(std::vector<std::size_t>{3, 1, 6, 0, 5, 2, 4});
  const auto rep = dynamics({d, shuffled}, {"s1", "s2"}, 2, 0);
  REQUIRE(rep.aligned_labels[0] == rep.aligned_labels[1]);
}

TEST_CASE("models drifting toward their own block are flagged as solidifying") {
  // each model starts partly pulled toward the other block and the pull fades
  const std::vector<int> groups{0, 1, 0, 0, 1, 1, 0};
  const std::vector<double> pull{0.3, 0.1, 0.0, 0.2, 0.25, 0.05, 0.15};
  std::vector<DistanceMatrix> stages;
  for (double t : {1.0, 0.6, 0.3, 0.0}) {
    auto d = block_matrix(groups, 0.2, 1.0);
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = 0; j < groups.size(); ++j)
        if (groups[i] != groups[j]) d(i, j) = 1.0 - t * (pull[i] + pull[j]);
    stages.push_back(d);
  }
  const auto rep = dynamics(stages, {"a", "b", "c", "d"}, 2, 0);
  for (bool s : rep.solidifying) REQUIRE(s);
  for (std::size_t s = 1; s < stages.size(); ++s) REQUIRE(rep.aligned_labels[s] == rep.aligned_labels[0]);
}

TEST_CASE("a model pushed toward the other block is not solidifying") {
  const std::vector<int> groups{0, 1, 0, 0, 1, 1, 0};
  std::vector<DistanceMatrix> stages;
  for (double t : {0.0, 0.2, 0.4}) {
    auto d = block_matrix(groups, 0.2, 1.0);
    for (std::size_t j = 0; j < groups.size(); ++j)
      if (groups[j] != groups[0]) d(0, j) = d(j, 0) = 1.0 - t;
    stages.push_back(d);
  }
  const auto rep = dynamics(stages, {"a", "b", "c"}, 2, 0);
  REQUIRE_FALSE(rep.solidifying[0]);
}

TEST_CASE("dynamics rejects missing runs") {
  const auto d = block_matrix({0, 1, 0, 1}, 0.1, 0.9);
  auto other = d;
  other.ids[3] = "zz";
  REQUIRE_THROWS_AS(dynamics({d, other}, {"a", "b"}, 2, 0), ValidationError);
}
