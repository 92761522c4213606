#include <catch_amalgamated.hpp>

#include "atlas/model.hpp"
#include "oracles.hpp"

using namespace atlas;

namespace {

ModelConfig small_config(PositionalMode mode = PositionalMode::learned) {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 4;
  c.max_len = 6;
  c.hidden_dim = 5;
  c.positional_mode = mode;
  return c;
}

Batch random_batch(const ModelConfig& c, std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> toks, labels;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = 2 + uniform_index(rng, c.max_len - 1);
    for (std::size_t p = 0; p < c.max_len; ++p)
      toks.push_back(p < len ? 2 + static_cast<int>(uniform_index(rng, c.vocab_size - 2)) : kPadId);
    labels.push_back(static_cast<int>(uniform_index(rng, c.n_classes)));
  }
  return Batch(rows, c.max_len, toks, labels);
}

ParamVector random_params(const ModelConfig& c, std::uint64_t seed) {
  ParamVector p(make_manifest(c));
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = standard_normal(rng);
  return p;
}

}  // namespace

TEST_CASE("manifest size matches the closed-form parameter count") {
  for (auto mode : {PositionalMode::learned, PositionalMode::none}) {
    const auto c = small_config(mode);
    REQUIRE(make_manifest(c)->total_len() == param_count(c));
  }
  ModelConfig c;
  REQUIRE(param_count(c) == 64 * 16 + 14 * 16 + 32 * 16 + 32 + 2 * 32 + 2);
}

TEST_CASE("all-zero parameters give zero logits and loss log 2") {
  const auto c = small_config();
  ParamVector p(make_manifest(c));
  const auto b = random_batch(c, 7, 1);
  const auto logits = forward(p, b, c);
  for (double v : logits.values) REQUIRE(v == 0.0);
  REQUIRE(loss_acc(logits, b.labels).loss == Catch::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("backprop matches central differences") {
  const auto c = small_config();
  const auto b = random_batch(c, 9, 2);
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    const auto p = random_params(c, 100 + draw);
    const auto g = gradient(p, b, c);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double fd = oracle::model_grad(p, b, c, i, 1e-6);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-8}));
    }
  }
  REQUIRE(worst <= 1e-4);
}

TEST_CASE("long double oracle agrees with forward") {
  const auto c = small_config(PositionalMode::none);
  const auto b = random_batch(c, 6, 9);
  const auto p = random_params(c, 10);
  REQUIRE(static_cast<double>(oracle::model_loss(p, b, c)) ==
          Catch::Approx(loss_acc(forward(p, b, c), b.labels).loss).epsilon(1e-13));
}

TEST_CASE("loss_and_gradient loss agrees with forward") {
  const auto c = small_config();
  const auto b = random_batch(c, 5, 3);
  const auto p = random_params(c, 4);
  ParamVector g(p.manifest_ptr());
  REQUIRE(loss_and_gradient(p, b, c, g) == Catch::Approx(loss_acc(forward(p, b, c), b.labels).loss).epsilon(1e-14));
}

TEST_CASE("without positions the model ignores token order") {
  const auto c = small_config(PositionalMode::none);
  const auto p = random_params(c, 5);
  const Batch a(1, 6, {3, 4, 5, 6, kPadId, kPadId}, {0});
  const Batch b(1, 6, {6, 5, 3, 4, kPadId, kPadId}, {0});
  const auto la = forward(p, a, c), lb = forward(p, b, c);
  REQUIRE(la.at(0, 0) == Catch::Approx(lb.at(0, 0)).epsilon(1e-14));
  REQUIRE(la.at(0, 1) == Catch::Approx(lb.at(0, 1)).epsilon(1e-14));
}

TEST_CASE("learned positions make order visible") {
  const auto c = small_config();
  const auto p = random_params(c, 6);
  const Batch a(1, 6, {3, 4, 5, 6, kPadId, kPadId}, {0});
  const Batch b(1, 6, {6, 5, 3, 4, kPadId, kPadId}, {0});
  REQUIRE(forward(p, a, c).at(0, 0) != forward(p, b, c).at(0, 0));
}

TEST_CASE("padding does not change the prediction") {
  auto c = small_config();
  const auto p = random_params(c, 7);
  const Batch a(1, 6, {3, 4, 5, kPadId, kPadId, kPadId}, {1});
  const Batch b(1, 6, {3, 4, 5, kPadId, kPadId, kPadId}, {1});
  REQUIRE(forward(p, a, c).values == forward(p, b, c).values);
  const Batch wide(1, 6, {3, 4, 5, kPadId, kPadId, kPadId}, {1});
  const Batch narrow(1, 4, {3, 4, 5, kPadId}, {1});
  REQUIRE(forward(p, wide, c).values == forward(p, narrow, c).values);
}

TEST_CASE("init is deterministic with zero biases and bounded weights") {
  ModelConfig c;
  const auto p = init_params(c, 3, 4);
  REQUIRE(p == init_params(c, 3, 4));
  REQUIRE_FALSE(p == init_params(c, 3, 5));
  for (double v : p.tensor(tensor_names::dense_b)) REQUIRE(v == 0.0);
  for (double v : p.tensor(tensor_names::head_b)) REQUIRE(v == 0.0);
  const double limit = std::sqrt(6.0 / (32.0 + 16.0));
  for (double v : p.tensor(tensor_names::dense_w)) REQUIRE(std::abs(v) <= limit);
  // Changing the head seed leaves the body untouched.
  const auto q = init_params(c, 3, 5);
  const auto mask = head_mask(p.manifest());
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!mask[i]) REQUIRE(p[i] == q[i]);
}

TEST_CASE("out-of-range tokens and labels are rejected") {
  const auto c = small_config();
  const auto p = random_params(c, 8);
  REQUIRE_THROWS_AS(forward(p, Batch(1, 6, {3, 99, kPadId, kPadId, kPadId, kPadId}, {0}), c), ValidationError);
  const auto logits = forward(p, Batch(1, 6, {3, 4, kPadId, kPadId, kPadId, kPadId}, {0}), c);
  REQUIRE_THROWS_AS(loss_acc(logits, std::vector<int>{2}), ValidationError);
}

TEST_CASE("collapse takes the max over mapped sources") {
  Logits l{1, 3, {0.5, 2.0, -1.0}};
  const auto out = collapse_logits(l, std::vector<int>{0, 1, 0});
  REQUIRE(out.at(0, 0) == 0.5);
  REQUIRE(out.at(0, 1) == 2.0);
  REQUIRE_THROWS_AS(collapse_logits(l, std::vector<int>{0, 0, 0}), ValidationError);
}

TEST_CASE("ties resolve toward the lower class") {
  Logits l{1, 2, {1.0, 1.0}};
  REQUIRE(predicted_class(l, 0) == 0);
  REQUIRE(loss_acc(l, std::vector<int>{0}).accuracy == 1.0);
}

TEST_CASE("model config json round trip") {
  auto c = small_config(PositionalMode::none);
  REQUIRE(model_config_from_json(to_json(c)) == c);
  auto j = to_json(c);
  j["activation"] = "tanh";
  REQUIRE_THROWS_AS(model_config_from_json(j), ValidationError);
}
