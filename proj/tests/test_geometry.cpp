#include <catch_amalgamated.hpp>

#include "atlas/geometry.hpp"
#include "oracles.hpp"

using namespace atlas;

namespace {

SharpnessConfig quick_sharpness(double eps, std::uint64_t seed = 0) {
  SharpnessConfig c;
  c.epsilon = eps;
  c.ascent_steps = 64;
  c.ascent_lr = 0.05;
  c.eval_interval = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("sharpness of a linear loss reaches the box corner") {
  const auto x = flat_params({1.0, 2.0});
  const auto r = epsilon_sharpness(x, oracle::LinearSum{}, quick_sharpness(0.1));
  REQUIRE(std::abs(r.sharpness - 12.5) <= 1e-6);
  REQUIRE(r.base_loss == 3.0);
  for (std::uint64_t s = 1; s < 5; ++s)
    REQUIRE(epsilon_sharpness(x, oracle::LinearSum{}, quick_sharpness(0.1, s)).sharpness ==
            Catch::Approx(r.sharpness).epsilon(1e-3));
}

TEST_CASE("sharpness of a constant loss is zero") {
  const auto r = epsilon_sharpness(flat_params({0.3, -0.7, 5.0}), oracle::Constant{}, quick_sharpness(0.1));
  REQUIRE(r.sharpness == 0.0);
}

TEST_CASE("sharpness defaults") {
  SharpnessConfig c;
  REQUIRE(c.epsilon == 1e-5);
  REQUIRE(c.ascent_steps == 8192);
  REQUIRE(sharpness_config_from_json(to_json(c)).ascent_lr == c.ascent_lr);
  c.epsilon = 0.0;
  REQUIRE_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("sharpness on a model is nonnegative") {
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.max_len = 4;
  const Batch b(3, 4, {2, 3, kPadId, kPadId, 4, 5, 6, kPadId, 7, 8, 9, 2}, {0, 1, 1});
  const ModelObjective obj(mc, b);
  auto cfg = quick_sharpness(1e-3);
  cfg.ascent_lr = 1e-3;
  REQUIRE(epsilon_sharpness(init_params(mc, 1, 2), obj, cfg).sharpness >= 0.0);
}

TEST_CASE("plane basis worked example") {
  const auto b = plane_basis(flat_params({0, 0}), flat_params({2, 0}), flat_params({1, 1}));
  REQUIRE(b.scale_unit == 2.0);
  REQUIRE(b.anchors[0] == std::pair{0.0, 0.0});
  REQUIRE(b.anchors[1] == std::pair{1.0, 0.0});
  REQUIRE(b.anchors[2].first == Catch::Approx(0.5));
  REQUIRE(b.anchors[2].second == Catch::Approx(0.5));
}

TEST_CASE("plane basis is orthonormal and rejects collinear anchors") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> p[3];
    for (auto& v : p)
      for (int i = 0; i < 50; ++i) v.push_back(standard_normal(rng));
    const auto b = plane_basis(flat_params(p[0]), flat_params(p[1]), flat_params(p[2]));
    REQUIRE(std::abs(dot(b.u, b.v)) <= 1e-12);
    REQUIRE(std::abs(norm(b.u) - 1.0) <= 1e-12);
    REQUIRE(std::abs(norm(b.v) - 1.0) <= 1e-12);
  }
  REQUIRE_THROWS_AS(plane_basis(flat_params({0, 0}), flat_params({1, 1}), flat_params({3, 3})), ValidationError);
  REQUIRE_THROWS_AS(plane_basis(flat_params({1, 1}), flat_params({1, 1}), flat_params({3, 0})), ValidationError);
}

TEST_CASE("plane surface over a bowl matches the closed form") {
  const oracle::Bowl bowl{{1.0, 2.0, 0.5}, {0.1, -0.3, 0.2}};
  const auto p1 = flat_params({0.0, 0.0, 0.0}), p2 = flat_params({1.0, 0.5, 0.0}),
             p3 = flat_params({0.2, 1.0, -1.0});
  const auto basis = plane_basis(p1, p2, p3);
  const auto g = plane_loss_surface(basis, {-0.5, 1.5}, {-0.5, 1.5}, 9, bowl);
  for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix)
      REQUIRE(std::abs(g.at(ix, iy) - bowl.value(basis.point(g.xs[ix], g.ys[iy]))) <= 1e-12);
  // grid includes (0,0) and (1,0)
  REQUIRE(std::abs(g.at(2, 2) - bowl.value(p1)) <= 1e-12);
  REQUIRE(std::abs(g.at(6, 2) - bowl.value(p2)) <= 1e-12);
  const auto fine = plane_loss_surface(basis, {-0.5, 1.5}, {-0.5, 1.5}, 17, bowl);
  for (std::size_t iy = 0; iy < 9; ++iy)
    for (std::size_t ix = 0; ix < 9; ++ix) REQUIRE(fine.at(2 * ix, 2 * iy) == g.at(ix, iy));
}

TEST_CASE("plane csv lists every grid point") {
  const oracle::Bowl bowl{{1.0, 1.0}, {0.0, 0.0}};
  const auto basis = plane_basis(flat_params({0, 0}), flat_params({1, 0}), flat_params({0, 1}));
  const auto g = plane_loss_surface(basis, {0.0, 1.0}, {0.0, 1.0}, 3, bowl);
  const auto csv = plane_to_csv(g);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 10);
  REQUIRE(csv.rfind("x,y,loss\n", 0) == 0);
  REQUIRE(plane_sidecar(g, {"a", "b", "c"}).at("anchors").size() == 3);
}

TEST_CASE("unfitted chain is the linear path") {
  const auto a = flat_params({-1.0, 0.2}), b = flat_params({1.0, 0.1});
  oracle::DoubleWell well;
  ChainFitConfig cfg;
  cfg.fit_steps = 0;
  const auto chain = fit_low_loss_curve(a, b, well, cfg);
  REQUIRE(chain.bends.size() == 3);
  const auto along = eval_chain_path(chain, 9, well);
  const auto linear = reversed(eval_linear_path(a, b, 9, well));
  REQUIRE(along.losses == linear.losses);
}

TEST_CASE("fitted chain keeps its endpoints and bends around the double well") {
  const auto a = flat_params({-1.0, 0.0}), b = flat_params({1.0, 0.0});
  oracle::DoubleWell well;
  ChainFitConfig cfg;
  cfg.fit_steps = 20000;
  cfg.seed = 5;
  const auto chain = fit_low_loss_curve(a, b, well, cfg);
  REQUIRE(chain.a == a);
  REQUIRE(chain.b == b);
  REQUIRE(chain.at(0.0) == a);
  REQUIRE(chain.at(1.0) == b);
  const auto along = eval_chain_path(chain, 101, well);
  const auto linear = eval_linear_path(a, b, 101, well);
  REQUIRE(std::abs(barrier_height(linear) - 1.0) <= 1e-9);
  REQUIRE(*std::max_element(along.losses.begin(), along.losses.end()) <= 0.1);
}

TEST_CASE("chain fitting is seeded") {
  const auto a = flat_params({-1.0, 0.0}), b = flat_params({1.0, 0.0});
  oracle::DoubleWell well;
  ChainFitConfig cfg;
  cfg.fit_steps = 200;
  const auto c1 = fit_low_loss_curve(a, b, well, cfg), c2 = fit_low_loss_curve(a, b, well, cfg);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(c1.bends[j] == c2.bends[j]);
}
