#include <cmath>

#include "doctest.h"
#include "edufed/attn_gru.hpp"
#include "edufed/errors.hpp"
#include "oracles.hpp"

using namespace edufed;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("zero weights give the zero fixed point") {
  ModelParams p = make_attn_gru(ModelShape{12, 5});
  Rng rng(3);
  const auto seq = oracle::random_sequence(rng, 5, 7);
  for (const Vec& h : gru_forward(p, seq)) CHECK(h.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gru_forward shape contract") {
  Rng rng(1);
  ModelParams p = oracle::random_model(rng, 10, 4);
  const auto seq = oracle::random_sequence(rng, 3, 6);
  const auto states = gru_forward(p, seq);
  REQUIRE(states.size() == 6);
  for (const auto& h : states) CHECK(h.size() == 4);
  CHECK_THROWS_AS(gru_forward(p, oracle::random_sequence(rng, 4, 3)), ShapeError);
  CHECK_THROWS_AS(gru_forward(p, std::vector<EncodedActivity>{}), ShapeError);
}

TEST_CASE("scalar GRU matches a hand-evaluated recurrence") {
  // d = 8 (n = 1) but only the video bit feeds a nonzero weight, so the cell
  // is effectively scalar-input.
  ModelParams p = make_attn_gru(ModelShape{8, 1});
  auto W = p.values(layer_names::kGruInput);  // 8 x 3
  W[0] = 0.5;   // video bit -> z
  W[1] = -0.3;  // video bit -> r
  W[2] = 0.8;   // video bit -> n
  auto U = p.values(layer_names::kGruRecurrent);  // 3 x 1
  U[0] = 0.2;
  U[1] = 0.4;
  U[2] = -0.6;
  auto b = p.values(layer_names::kGruBias);
  b[0] = 0.1;
  b[1] = 0.0;
  b[2] = -0.2;
  const std::vector<EncodedActivity> seq = {
      EncodedActivity::watch(1, 0, ActivityKind::WatchNoQuiz),
      EncodedActivity::forum(1, ActivityKind::ForumView)};

  // Hand recurrence, x1 = 1 (video bit), x2 = 0.
  double h = 0.0;
  double expected[2];
  for (int t = 0; t < 2; ++t) {
    const double x = t == 0 ? 1.0 : 0.0;
    const double z = sig(0.5 * x + 0.1 + 0.2 * h);
    const double r = sig(-0.3 * x + 0.0 + 0.4 * h);
    const double n = std::tanh(0.8 * x - 0.2 + -0.6 * (r * h));
    h = (1 - z) * h + z * n;
    expected[t] = h;
  }
  const auto states = gru_forward(p, seq);
  CHECK(states[0](0) == doctest::Approx(expected[0]).epsilon(1e-14));
  CHECK(states[1](0) == doctest::Approx(expected[1]).epsilon(1e-14));
  // Frozen values of the same recurrence.
  CHECK(expected[0] == doctest::Approx(0.3467494396881144).epsilon(1e-12));
  CHECK(expected[1] == doctest::Approx(-0.0047840166787014304).epsilon(1e-10));
}

TEST_CASE("attention pooling") {
  ModelParams p = make_attn_gru(ModelShape{10, 2});
  SUBCASE("single step") {
    Vec h(2);
    h << 0.3, -0.7;
    const std::vector<Vec> states{h};
    const auto r = attention_pool(p, states);
    CHECK(r.weights(0) == 1.0);
    CHECK(r.pooled.isApprox(h));
  }
  SUBCASE("identical states give uniform weights") {
    Rng rng(5);
    ModelParams q = oracle::random_model(rng, 10, 2);
    Vec h(2);
    h << 0.1, 0.2;
    const std::vector<Vec> states{h, h, h, h};
    const auto r = attention_pool(q, states);
    for (int t = 0; t < 4; ++t) CHECK(r.weights(t) == doctest::Approx(0.25));
    CHECK(r.pooled.isApprox(h));
  }
  SUBCASE("hand computation, k=2, L=3") {
    auto Wa = p.values(layer_names::kAttnW);
    Wa[0] = 1.0; Wa[1] = -0.5; Wa[2] = 0.25; Wa[3] = 2.0;
    auto pv = p.values(layer_names::kAttnP);
    pv[0] = 0.7; pv[1] = -1.1;
    std::vector<Vec> states(3, Vec(2));
    states[0] << 0.2, 0.4;
    states[1] << -0.3, 0.1;
    states[2] << 0.5, -0.6;
    double e[3];
    for (int t = 0; t < 3; ++t) {
      const double u0 = std::tanh(1.0 * states[t](0) - 0.5 * states[t](1));
      const double u1 = std::tanh(0.25 * states[t](0) + 2.0 * states[t](1));
      e[t] = 0.7 * u0 - 1.1 * u1;
    }
    const double z = std::exp(e[0]) + std::exp(e[1]) + std::exp(e[2]);
    const auto r = attention_pool(p, states);
    double pooled0 = 0.0;
    for (int t = 0; t < 3; ++t) {
      CHECK(r.weights(t) == doctest::Approx(std::exp(e[t]) / z).epsilon(1e-14));
      pooled0 += std::exp(e[t]) / z * states[t](0);
    }
    CHECK(r.pooled(0) == doctest::Approx(pooled0).epsilon(1e-14));
    CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("predict_outcome") {
  ModelParams p = make_attn_gru(ModelShape{10, 3});
  Vec h = Vec::Constant(3, 0.4);
  auto y = predict_outcome(p, h);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
  p.values(layer_names::kHeadB)[0] = 3.0;
  p.values(layer_names::kHeadB)[1] = 3.0;
  y = predict_outcome(p, h);
  CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-15));
  p.values(layer_names::kHeadB)[0] = std::log(9.0);
  p.values(layer_names::kHeadB)[1] = 0.0;
  y = predict_outcome(p, h);
  CHECK(y[0] == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.1).epsilon(1e-13));
}

TEST_CASE("softmax shift invariance of the head") {
  Rng rng(11);
  ModelParams p = oracle::random_model(rng, 10, 4);
  Vec h = Vec::Random(4);
  const auto y = predict_outcome(p, h);
  p.values(layer_names::kHeadB)[0] += 17.25;
  p.values(layer_names::kHeadB)[1] += 17.25;
  const auto y2 = predict_outcome(p, h);
  CHECK(std::abs(y[0] - y2[0]) <= 1e-12);
  CHECK(std::abs(y[1] - y2[1]) <= 1e-12);
}

TEST_CASE("bce_loss") {
  const std::array<double, 2> half{0.5, 0.5};
  CHECK(bce_loss(half, 1) == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(bce_loss(half, 0) == doctest::Approx(2.0 * std::log(2.0)));
  const std::array<double, 2> perfect{1.0, 0.0};
  CHECK(bce_loss(perfect, 1) < 1e-10);
  const std::array<double, 2> p{0.9, 0.1};
  CHECK(bce_loss(p, 1) == doctest::Approx(-2.0 * std::log(0.9)).epsilon(1e-14));
  CHECK(bce_loss(p, 1) == doctest::Approx(0.2107210).epsilon(1e-6));
  const std::vector<std::array<double, 2>> preds{p, half};
  const std::vector<int> labels{1, 0};
  CHECK(bce_loss(preds, labels) == doctest::Approx(bce_loss(p, 1) + bce_loss(half, 0)));
  CHECK_THROWS_AS(bce_loss(preds, std::vector<int>{1}), ShapeError);
}

TEST_CASE("backward matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    ModelParams p = oracle::random_model(rng, 10, 4);
    const auto seq = oracle::random_sequence(rng, 3, 6);
    const int label = static_cast<int>(seed % 2);
    const DropoutSpec drop{seed % 3 == 0 ? 0.5 : 0.0, seed};
    const Gradients analytic = backward(forward(p, seq, drop), label, p);
    const Gradients numeric = oracle::finite_difference(
        [&](const ModelParams& q) { return bce_loss(forward(q, seq, drop).probabilities, label); },
        p, 1e-5);
    CAPTURE(seed);
    CHECK(oracle::max_relative_error(analytic, numeric) <= 1e-4);
    // The pretraining head never touches the outcome loss.
    for (double v : analytic.values(layer_names::kPretrainW)) CHECK(v == 0.0);
    for (double v : analytic.values(layer_names::kPretrainB)) CHECK(v == 0.0);
  }
}

TEST_CASE("balanced batch on a zero model has zero head-bias gradient") {
  ModelParams p = make_attn_gru(ModelShape{10, 4});
  Rng rng(2);
  const auto seq = oracle::random_sequence(rng, 3, 5);
  Gradients g = p.zeros_like();
  backward_into(forward(p, seq), 1, p, g);
  backward_into(forward(p, seq), 0, p, g);
  CHECK(g.values(layer_names::kHeadB)[0] == 0.0);
  CHECK(g.values(layer_names::kHeadB)[1] == 0.0);
}

TEST_CASE("stale trace is rejected") {
  Rng rng(4);
  ModelParams p = oracle::random_model(rng, 10, 4);
  const auto seq = oracle::random_sequence(rng, 3, 4);
  const ForwardTrace tr = forward(p, seq);
  p.values(layer_names::kGruInput)[0] += 1.0;
  CHECK_THROWS_AS(backward(tr, 1, p), ContractError);
}

TEST_CASE("forward is deterministic and distributions are valid") {
  Rng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    ModelParams p = oracle::random_model(rng, 12, 6, 2.0);
    const auto seq = oracle::random_sequence(rng, 5, 1 + rng() % 12);
    const DropoutSpec drop{0.5, static_cast<std::uint64_t>(trial)};
    const ForwardTrace a = forward(p, seq, drop);
    const ForwardTrace b = forward(p, seq, drop);
    CHECK(a.pooled == b.pooled);
    CHECK(a.probabilities == b.probabilities);
    CHECK(std::abs(a.weights.sum() - 1.0) <= 1e-9);
    CHECK(a.weights.minCoeff() >= 0.0);
    CHECK(std::abs(a.probabilities[0] + a.probabilities[1] - 1.0) <= 1e-9);
  }
}

TEST_CASE("glorot init is bounded and leaves biases at zero") {
  ModelParams p = make_attn_gru(ModelShape{33, 48});
  init_glorot(p, 42);
  const double lim = std::sqrt(6.0 / (33 + 144));
  for (double v : p.values(layer_names::kGruInput)) CHECK(std::abs(v) <= lim);
  for (double v : p.values(layer_names::kGruBias)) CHECK(v == 0.0);
  ModelParams q = make_attn_gru(ModelShape{33, 48});
  init_glorot(q, 42);
  CHECK(p == q);
  CHECK(shape_of(p).hidden_dim == 48);
  CHECK(shape_of(p).input_dim == 33);
}
