#include <cmath>

#include "doctest.h"
#include "gradmatch/model.hpp"
#include "oracles.hpp"

using namespace gradmatch;

TEST_CASE("zero-parameter logistic model yields ln C per sample") {
  const Dataset d = make_gaussian_blobs(5, 2, 3, 4.0, 1);
  ModelState m = ModelState::logistic(3, 2);

  const auto idx = all_indices(d);
  const auto out = forward_loss(m, d, idx);
  for (Eigen::Index i = 0; i < out.per_sample_losses.size(); ++i)
    CHECK(out.per_sample_losses[i] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(out.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ModelState m4 = ModelState::logistic(3, 4);
  Dataset d4 = d;
  d4.class_count = 4;
  CHECK(forward_loss(m4, d4, idx).loss == doctest::Approx(std::log(4.0)));
}

TEST_CASE("weighted loss renormalizes to the batch mean") {
  const Dataset d = make_gaussian_blobs(6, 2, 4, 3.0, 2);
  const ModelState m = ModelState::logistic(4, 2).with_random_init(11);
  const auto idx = all_indices(d);

  const double plain = forward_loss(m, d, idx).loss;
  Vector equal = Vector::Constant(d.n(), 3.7);
  CHECK(forward_loss(m, d, idx, &equal).loss == doctest::Approx(plain).epsilon(1e-12));

  // One sample with any positive weight: the weight cancels.
  const int one[1] = {2};
  Vector w1 = Vector::Constant(1, 5.0);
  const auto single = forward_loss(m, d, std::span<const int>(one, 1), &w1);
  CHECK(single.loss == doctest::Approx(single.per_sample_losses[0]));
}

TEST_CASE("last-layer gradient blocks match the hand evaluation") {
  // C=2, x=(1,0), theta=0 so p=(0.5,0.5), label 0.
  Dataset d;
  d.features.resize(1, 2);
  d.features << 1.0, 0.0;
  d.labels = {0};
  d.class_count = 2;
  const ModelState m = ModelState::logistic(2, 2);

  const Vector g = per_sample_last_layer_grad(m, d, 0);
  REQUIRE(g.size() == 6);
  CHECK(g[0] == doctest::Approx(-0.5));  // class 0 bias
  CHECK(g[1] == doctest::Approx(-0.5));  // class 0 weights
  CHECK(g[2] == doctest::Approx(0.0));
  CHECK(g[3] == doctest::Approx(0.5));   // class 1 bias
  CHECK(g[4] == doctest::Approx(0.5));
  CHECK(g[5] == doctest::Approx(0.0));
}

TEST_CASE("degenerate p == y construction gives a zero gradient") {
  Dataset d;
  d.features.resize(1, 2);
  d.features << 3.0, -1.0;
  d.labels = {1};
  d.class_count = 2;
  // Push the label logit far up: softmax saturates to the one-hot target.
  ModelState m = ModelState::logistic(2, 2);
  m.theta[5] = 200.0;  // class-1 bias
  const Vector g = per_sample_last_layer_grad(m, d, 0);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients agree with central differences") {
  const Dataset d = make_gaussian_blobs(4, 3, 5, 2.0, 7);
  Rng rng(99);

  for (const bool use_mlp : {false, true}) {
    ModelState m = use_mlp ? ModelState::mlp(5, 6, 3) : ModelState::logistic(5, 3);
    m = m.with_random_init(rng.next_u64());
    const int sample = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d.n())));
    const int idx[1] = {sample};

    auto loss_at = [&](const Vector& theta) {
      ModelState probe = m;
      probe.theta = theta;
      return forward_loss(probe, d, std::span<const int>(idx, 1)).loss;
    };
    const Vector numeric = oracle::central_difference(loss_at, m.theta);
    const Vector analytic = batch_grad(m, d, std::span<const int>(idx, 1));
    CHECK((numeric - analytic).lpNorm<Eigen::Infinity>() /
              std::max(1.0, analytic.lpNorm<Eigen::Infinity>()) <
          1e-5);

    // Last-layer rows are the matching slice of the full gradient.
    const Vector ll = per_sample_last_layer_grad(m, d, sample);
    const int h = m.penultimate_width();
    for (int c = 0; c < m.class_count; ++c) {
      const Eigen::Index bias_pos =
          m.last_layer_offset() + Eigen::Index(m.class_count) * h + c;
      CHECK(ll[Eigen::Index(c) * (h + 1)] ==
            doctest::Approx(analytic[bias_pos]).epsilon(1e-9));
      for (int j = 0; j < h; ++j) {
        const Eigen::Index w_pos = m.last_layer_offset() + Eigen::Index(c) * h + j;
        CHECK(ll[Eigen::Index(c) * (h + 1) + 1 + j] ==
              doctest::Approx(analytic[w_pos]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("sgd step arithmetic") {
  ModelState m = ModelState::logistic(2, 2);
  m.theta << 1.0, 2.0, -1.0, 0.5, 4.0, -2.0;
  const Vector theta0 = m.theta;

  SUBCASE("zero gradient, zero velocity leaves pure decay") {
    SgdOptimizer opt;
    opt.step(m, Vector::Zero(6), 0.1);
    CHECK((m.theta - theta0 * (1.0 - 0.1 * 5e-4)).norm() < 1e-15);
  }

  SUBCASE("momentum disabled matches the definition") {
    Vector g = Vector::Constant(6, 0.25);
    SgdOptimizer opt;
    opt.momentum = 0.0;
    opt.step(m, g, 0.1);
    CHECK((m.theta - (theta0 - 0.1 * (g + 5e-4 * theta0))).norm() < 1e-15);
  }

  SUBCASE("two identical steps pick up the momentum term") {
    Vector g = Vector::Constant(6, 1.0);
    SgdOptimizer opt;
    opt.weight_decay = 0.0;
    opt.step(m, g, 0.01);
    const Vector after_one = m.theta;
    opt.step(m, g, 0.01);
    const Vector second_update = after_one - m.theta;
    // second step = lr*(g + 0.9*g)
    CHECK((second_update - 0.01 * 1.9 * g).norm() < 1e-14);
  }

  SUBCASE("non-finite gradients are rejected") {
    Vector g = Vector::Zero(6);
    g[3] = std::numeric_limits<double>::quiet_NaN();
    SgdOptimizer opt;
    CHECK_THROWS_AS(opt.step(m, g, 0.1), NonFiniteGradient);
  }
}

TEST_CASE("cross-entropy stays nonnegative on random models") {
  const Dataset d = make_gaussian_blobs(8, 3, 4, 2.0, 21);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelState m =
        ModelState::mlp(4, 5, 3).with_random_init(rng.next_u64(), 2.0);
    const auto out = forward_loss(m, d, all_indices(d));
    CHECK(out.per_sample_losses.minCoeff() >= 0.0);
  }
}

TEST_CASE("well-separated blobs are linearly separable") {
  // Convex-solver oracle: a logistic model fit by plain gradient descent on
  // the full data reaches >= 99% training accuracy.
  const Dataset d = make_gaussian_blobs(100, 2, 5, 6.0, 42);
  ModelState m = ModelState::logistic(5, 2);
  SgdOptimizer opt;
  opt.weight_decay = 0.0;
  const auto idx = all_indices(d);
  for (int epoch = 0; epoch < 200; ++epoch)
    opt.step(m, batch_grad(m, d, idx), 0.5);
  CHECK(accuracy(m, d) >= 0.99);
}
