#include <doctest.h>

#include <numeric>

#include "pbev/balancer.hpp"
#include "pbev/rng.hpp"

using namespace pbev;
using namespace pbev::balance;

TEST_SUITE_BEGIN("balancer");

TEST_CASE("accumulate sums batches and is order-independent") {
    auto l = TaskLossLedger::make({"a", "b"}, {1, 1});
    accumulate(l, 0, 1.5);
    accumulate(l, 0, 2.5);
    CHECK(l.sums[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(l.samples[0] == 2);

    accumulate(l, 1, -0.25);  // log-sigma terms can be negative: flagged, kept
    CHECK(l.negative_flags == 1);
    CHECK(l.sums[1] == doctest::Approx(-0.25));

    Rng rng(701);
    std::vector<double> values;
    for (int i = 0; i < 50; ++i) values.push_back(rng.uniform(0.1, 3.0));
    auto l1 = TaskLossLedger::make({"t"}, {1});
    for (double v : values) accumulate(l1, 0, v);
    rng.shuffle(values);
    auto l2 = TaskLossLedger::make({"t"}, {1});
    for (double v : values) accumulate(l2, 0, v);
    CHECK(std::abs(l1.sums[0] - l2.sums[0]) < 1e-12);
}

TEST_CASE("update_weights: quoted formula, hand examples, invariants") {
    auto l = TaskLossLedger::make({"a", "b"}, {1, 1});
    CHECK(l.weights[0] == 1.0);  // epoch 0: all weights one
    CHECK(l.weights[1] == 1.0);
    accumulate(l, 0, 10.0);
    accumulate(l, 1, 5.0);
    update_weights(l);
    CHECK(l.weights[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(l.weights[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(l.weights[0] + l.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(l.sums[0] == 0.0);  // reset after update
    CHECK(l.epoch == 1);

    auto l3 = TaskLossLedger::make({"obstacle", "parking", "freespace"}, {5, 3, 1});
    accumulate(l3, 0, 8.0);
    accumulate(l3, 1, 4.0);
    accumulate(l3, 2, 2.0);
    double lsum[3] = {8, 4, 2};
    update_weights(l3);
    double norm = 5.0 / 8 + 3.0 / 4 + 1.0 / 2;
    CHECK(l3.weights[0] == doctest::Approx((5.0 / 8) / norm).epsilon(1e-12));
    CHECK(l3.weights[1] == doctest::Approx((3.0 / 4) / norm).epsilon(1e-12));
    CHECK(l3.weights[2] == doctest::Approx((1.0 / 2) / norm).epsilon(1e-12));
    double s = l3.weights[0] + l3.weights[1] + l3.weights[2];
    CHECK(std::abs(s - 1.0) <= 1e-12);
    // Equal-scale law: w_t * L_t / c_t constant across tasks.
    double k0 = l3.weights[0] * lsum[0] / 5.0;
    CHECK(std::abs(l3.weights[1] * lsum[1] / 3.0 - k0) < 1e-9);
    CHECK(std::abs(l3.weights[2] * lsum[2] / 1.0 - k0) < 1e-9);
}

TEST_CASE("degenerate epochs keep previous weights") {
    auto l = TaskLossLedger::make({"a", "b"}, {1, 2});
    accumulate(l, 0, 4.0);
    accumulate(l, 1, 2.0);
    update_weights(l);
    auto w_before = l.weights;
    update_weights(l);  // nothing accumulated: unchanged
    CHECK(l.weights == w_before);

    // One task degenerate: it retains its previous unnormalized weight.
    accumulate(l, 0, 8.0);
    double prev_hat_b = l.w_hat[1];
    update_weights(l);
    double expect0 = 1.0 / 8.0;
    CHECK(l.weights[0] == doctest::Approx(expect0 / (expect0 + prev_hat_b)).epsilon(1e-12));
    CHECK(l.weights[0] + l.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights invariant under uniform prior scaling; loss scaling reciprocal") {
    Rng rng(709);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> priors{rng.uniform(0.5, 5), rng.uniform(0.5, 5),
                                   rng.uniform(0.5, 5)};
        std::vector<double> losses{rng.uniform(0.5, 9), rng.uniform(0.5, 9),
                                   rng.uniform(0.5, 9)};
        auto a = TaskLossLedger::make({"x", "y", "z"}, priors);
        auto scaled = priors;
        double alpha = rng.uniform(0.1, 10);
        for (double& c : scaled) c *= alpha;
        auto b = TaskLossLedger::make({"x", "y", "z"}, scaled);
        for (int i = 0; i < 3; ++i) {
            accumulate(a, i, losses[i]);
            accumulate(b, i, losses[i]);
        }
        update_weights(a);
        update_weights(b);
        for (int i = 0; i < 3; ++i)
            CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-12));

        // Scaling one task's sum by k scales its unnormalized weight 1/k.
        auto c = TaskLossLedger::make({"x", "y", "z"}, priors);
        double k = rng.uniform(0.5, 4);
        accumulate(c, 0, losses[0] * k);
        accumulate(c, 1, losses[1]);
        accumulate(c, 2, losses[2]);
        update_weights(c);
        CHECK(c.w_hat[0] == doctest::Approx(a.w_hat[0] / k).epsilon(1e-12));
    }
}

TEST_CASE("combined_loss: weighted sum, missing tasks, gradient flow") {
    auto l = TaskLossLedger::make({"a", "b"}, {1, 1});
    accumulate(l, 0, 10.0);
    accumulate(l, 1, 5.0);
    update_weights(l);  // w = [1/3, 2/3]
    auto la = ad::leaf(Tensor::scalar(3.0), true);
    auto lb = ad::leaf(Tensor::scalar(3.0), true);
    auto total = combined_loss(l, {la, lb});
    CHECK(total->val[0] == doctest::Approx(3.0).epsilon(1e-12));
    ad::backward(total);
    CHECK(la->grad[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(lb->grad[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    auto single = TaskLossLedger::make({"only"}, {7.5});
    accumulate(single, 0, 42.0);
    update_weights(single);
    auto ls = ad::leaf(Tensor::scalar(1.25), true);
    CHECK(combined_loss(single, {ls})->val[0] == doctest::Approx(1.25).epsilon(1e-12));

    auto with_missing = combined_loss(l, {la, nullptr});
    CHECK(l.missing_flags == 1);
    CHECK(with_missing->val[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_SUITE_END();
