#include <cmath>

#include "doctest.h"
#include "edufed/attn_gru.hpp"
#include "edufed/errors.hpp"
#include "edufed/pretrain.hpp"
#include "oracles.hpp"

using namespace edufed;
namespace ln = edufed::layer_names;

namespace {

// MSE between the uniform distribution over `width` slots and a target with
// `set_bits` ones.
double uniform_mse(int width, int set_bits) {
  const double u = 1.0 / width;
  return (set_bits * (1.0 - u) * (1.0 - u) + (width - set_bits) * u * u) / width;
}

}  // namespace

TEST_CASE("masked-position instances") {
  Rng rng(5);
  const auto seq = oracle::random_sequence(rng, 4, 4);
  const auto inst = make_cbow_instances(seq);
  REQUIRE(inst.size() == 4);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    CHECK(inst[i].target_position == i);
    CHECK(inst[i].target == seq[i]);
    int zeros = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (t == i) {
        CHECK(inst[i].masked_sequence[t].is_zero());
      } else {
        CHECK(inst[i].masked_sequence[t] == seq[t]);
      }
      zeros += inst[i].masked_sequence[t].is_zero() ? 1 : 0;
    }
    CHECK(zeros == 1);
  }
  CHECK(make_cbow_instances(std::vector<EncodedActivity>(seq.begin(), seq.begin() + 1)).empty());

  const auto three = make_cbow_instances(std::vector<EncodedActivity>(seq.begin(), seq.begin() + 3));
  CHECK(three[1].masked_sequence[0] == seq[0]);
  CHECK(three[1].masked_sequence[2] == seq[2]);
  CHECK(three[1].masked_sequence[1].is_zero());
}

TEST_CASE("reconstruction loss") {
  const auto watch = EncodedActivity::watch(5, 1, ActivityKind::WatchIncorrect);
  const auto forum = EncodedActivity::forum(5, ActivityKind::ForumReply);
  std::vector<double> exact(12, 0.0);
  for (int i = 0; i < watch.num_active(); ++i) exact[watch.active(i)] = 1.0;
  CHECK(cbow_loss(exact, watch) == 0.0);

  ModelParams zero = make_attn_gru(ModelShape{12, 4});
  Rng rng(2);
  const auto seq = oracle::random_sequence(rng, 5, 5);
  const auto pred = predict_activity(zero, seq);
  REQUIRE(pred.size() == 12);
  for (double p : pred) CHECK(p == doctest::Approx(1.0 / 12).epsilon(1e-14));
  CHECK(cbow_loss(pred, watch) == doctest::Approx(uniform_mse(12, 2)).epsilon(1e-14));
  CHECK(cbow_loss(pred, forum) == doctest::Approx(uniform_mse(12, 1)).epsilon(1e-14));
  CHECK_THROWS_AS(cbow_loss(std::vector<double>(11, 0.0), watch), ShapeError);

  for (int s = 0; s < 10; ++s) {
    Rng r(100 + s);
    ModelParams m = oracle::random_model(r, 12, 4, 2.0);
    for (const auto& inst : make_cbow_instances(oracle::random_sequence(r, 5, 4))) {
      CHECK(cbow_loss(predict_activity(m, inst.masked_sequence), inst.target) >= 0.0);
    }
  }
}

TEST_CASE("reconstruction gradient matches finite differences") {
  for (int s = 0; s < 5; ++s) {
    Rng rng(40 + s);
    ModelParams m = oracle::random_model(rng, 10, 4);
    const auto insts = make_cbow_instances(oracle::random_sequence(rng, 3, 5));
    const CbowInstance& inst = insts[static_cast<std::size_t>(s) % insts.size()];
    Gradients g = m.zeros_like();
    const double loss = cbow_loss_and_grad(m, inst, g);
    const auto f = [&](const ModelParams& at) {
      return cbow_loss(predict_activity(at, inst.masked_sequence), inst.target);
    };
    CHECK(loss == doctest::Approx(f(m)).epsilon(1e-12));
    const Gradients fd = oracle::finite_difference(f, m, 1e-5);
    CHECK(oracle::max_relative_error(g, fd) <= 1e-4);
    // The outcome head is not on the reconstruction path.
    for (double v : g.values(ln::kHeadW)) CHECK(v == 0.0);
    for (double v : g.values(ln::kHeadB)) CHECK(v == 0.0);
  }
}

TEST_CASE("pretraining lowers the reconstruction loss and is deterministic") {
  const auto pool = oracle::toy_cohort(40, 5, 3, "p");
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  AccessLog log;
  DataView view(&pool, idx, AccessPhase::Pretrain, &log);
  PretrainConfig cfg;
  cfg.epochs = 4;
  cfg.optimizer.lr = 1e-2;

  ModelParams a = make_attn_gru(ModelShape{12, 6});
  init_glorot(a, 9);
  ModelParams b = a;
  const auto la = pretrain(a, view, cfg, 1);
  const auto lb = pretrain(b, view, cfg, 1);
  CHECK(la == lb);
  CHECK(a == b);
  REQUIRE(la.size() == 4);
  CHECK(la.back() < la.front());
  CHECK(log.reads(AccessPhase::Pretrain).size() == pool.size());
  CHECK(log.reads(AccessPhase::Train).empty());

  PretrainConfig frozen = cfg;
  frozen.optimizer.lr = 0.0;
  ModelParams c = make_attn_gru(ModelShape{12, 6});
  init_glorot(c, 9);
  const ModelParams before = c;
  const auto lc = pretrain(c, view, frozen, 2);
  for (double l : lc) CHECK(l == doctest::Approx(lc.front()).epsilon(1e-12));
  CHECK(c == before);
}

TEST_CASE("weight transfer") {
  Rng rng(8);
  ModelParams pre = oracle::random_model(rng, 10, 4);
  ModelParams fresh = oracle::random_model(rng, 10, 4);
  const ModelParams out = transfer_weights(pre, fresh);
  for (auto name : {ln::kGruInput, ln::kGruRecurrent, ln::kGruBias, ln::kAttnW, ln::kAttnP}) {
    CHECK(out.layer(name).values == pre.layer(name).values);
  }
  CHECK(out.layer(ln::kHeadW).values == fresh.layer(ln::kHeadW).values);
  CHECK(out.layer(ln::kHeadB).values == fresh.layer(ln::kHeadB).values);
  for (double v : out.values(ln::kPretrainW)) CHECK(v == 0.0);

  const ModelParams self = transfer_weights(pre, pre);
  for (auto name : {ln::kGruInput, ln::kGruRecurrent, ln::kGruBias, ln::kAttnW, ln::kAttnP,
                    ln::kHeadW, ln::kHeadB}) {
    CHECK(self.layer(name).values == pre.layer(name).values);
  }
  CHECK_THROWS_AS(transfer_weights(pre, oracle::random_model(rng, 11, 4)), ShapeError);
}
