#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "blursplat/optimizer.hpp"
#include "blursplat/rng.hpp"

using namespace blursplat;

namespace {

// Reference Adam written out longhand, one scalar at a time, so the
// production kernel is checked against an independent transcription.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;

  double step(double param, double grad, double lr, int t,
              const AdamConfig& cfg) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, t));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, t));
    return param - lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
};

}  // namespace

TEST_CASE("adam matches a scalar reference over several steps") {
  const AdamConfig cfg;
  Rng rng(201);
  std::vector<double> params(7), ref(7);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = rng.uniform(-2.0, 2.0);
    ref[i] = params[i];
  }
  AdamSlot slot;
  slot.init(params.size());
  std::vector<ScalarAdam> oracle(params.size());

  for (int t = 1; t <= 5; ++t) {
    std::vector<double> grads(params.size());
    for (double& g : grads) g = rng.uniform(-1.0, 1.0);
    adam_step(&slot, params.data(), grads.data(), params.size(), 1e-2, t,
              cfg);
    for (std::size_t i = 0; i < params.size(); ++i) {
      ref[i] = oracle[i].step(ref[i], grads[i], 1e-2, t, cfg);
      CHECK(params[i] == doctest::Approx(ref[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("first step moves by the learning rate regardless of scale") {
  // With bias correction, mhat = g and vhat = g*g on step one, so the
  // update is lr * sign(g) for any gradient magnitude.
  const AdamConfig cfg;
  for (double g : {1e-8, 1e-3, 1.0, 1e6}) {
    AdamSlot slot;
    slot.init(1);
    double param = 0.5;
    const double grad = g;
    adam_step(&slot, &param, &grad, 1, 0.01, 1, cfg);
    CHECK(param == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  }
}

TEST_CASE("zero gradient leaves parameters fixed") {
  const AdamConfig cfg;
  AdamSlot slot;
  slot.init(3);
  std::vector<double> params = {1.0, -2.0, 3.0};
  const std::vector<double> grads(3, 0.0);
  for (int t = 1; t <= 3; ++t) {
    adam_step(&slot, params.data(), grads.data(), 3, 0.1, t, cfg);
  }
  CHECK(params[0] == 1.0);
  CHECK(params[1] == -2.0);
  CHECK(params[2] == 3.0);
}

TEST_CASE("adam update over a subrange touches only that range") {
  const AdamConfig cfg;
  AdamSlot slot;
  slot.init(6);
  std::vector<double> params = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  const std::vector<double> grads = {0.5, -0.5};
  adam_update(slot.m.data() + 2, slot.v.data() + 2, params.data() + 2,
              grads.data(), 2, 0.1, 1, cfg);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == 1.0);
  CHECK(params[2] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(params[3] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(params[4] == 1.0);
  CHECK(params[5] == 1.0);
  CHECK(slot.m[0] == 0.0);
  CHECK(slot.m[2] != 0.0);
}

TEST_CASE("slot append starts new entries with zero moments") {
  const AdamConfig cfg;
  AdamSlot slot;
  slot.init(2);
  std::vector<double> params = {1.0, 2.0};
  const std::vector<double> grads = {1.0, 1.0};
  adam_step(&slot, params.data(), grads.data(), 2, 0.1, 1, cfg);
  slot.append(2);
  REQUIRE(slot.size() == 4);
  CHECK(slot.m[2] == 0.0);
  CHECK(slot.v[3] == 0.0);
  CHECK(slot.m[0] != 0.0);
}

TEST_CASE("slot compact drops flagged rows and keeps the rest in order") {
  AdamSlot slot;
  slot.init(9);  // three rows of stride 3
  for (std::size_t i = 0; i < 9; ++i) {
    slot.m[i] = static_cast<double>(i);
    slot.v[i] = static_cast<double>(10 + i);
  }
  const std::vector<std::uint8_t> drop = {0, 1, 0};
  slot.compact(drop, 3);
  REQUIRE(slot.size() == 6);
  CHECK(slot.m[0] == 0.0);
  CHECK(slot.m[2] == 2.0);
  CHECK(slot.m[3] == 6.0);
  CHECK(slot.m[5] == 8.0);
  CHECK(slot.v[3] == 16.0);

  CHECK_THROWS_AS(slot.compact(drop, 3), std::invalid_argument);
  CHECK_THROWS_AS(slot.compact({0, 1}, 0), std::invalid_argument);
}

TEST_CASE("adam rejects bad steps and mismatched slots") {
  const AdamConfig cfg;
  AdamSlot slot;
  slot.init(2);
  std::vector<double> params = {1.0, 2.0};
  const std::vector<double> grads = {1.0, 1.0};
  CHECK_THROWS_AS(
      adam_step(&slot, params.data(), grads.data(), 2, 0.1, 0, cfg),
      std::invalid_argument);
  CHECK_THROWS_AS(
      adam_step(&slot, params.data(), grads.data(), 1, 0.1, 1, cfg),
      std::invalid_argument);
}

TEST_CASE("exponential decay hits both endpoints and falls in between") {
  const double lr0 = 1.6e-4;
  const double lr1 = 1.6e-6;
  CHECK(exp_decay_lr(lr0, lr1, 0.0) == doctest::Approx(lr0).epsilon(1e-12));
  CHECK(exp_decay_lr(lr0, lr1, 1.0) == doctest::Approx(lr1).epsilon(1e-12));
  // Geometric midpoint at t = 0.5.
  CHECK(exp_decay_lr(lr0, lr1, 0.5) ==
        doctest::Approx(std::sqrt(lr0 * lr1)).epsilon(1e-12));

  double prev = exp_decay_lr(lr0, lr1, 0.0);
  for (int i = 1; i <= 20; ++i) {
    const double cur = exp_decay_lr(lr0, lr1, i / 20.0);
    CHECK(cur < prev);
    prev = cur;
  }

  // Out-of-range times clamp to the endpoints.
  CHECK(exp_decay_lr(lr0, lr1, -0.5) == exp_decay_lr(lr0, lr1, 0.0));
  CHECK(exp_decay_lr(lr0, lr1, 1.5) == exp_decay_lr(lr0, lr1, 1.0));
  CHECK_THROWS_AS(exp_decay_lr(0.0, lr1, 0.5), std::invalid_argument);
}
