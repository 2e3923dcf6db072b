#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"

#include "kdlab/optim.hpp"
#include "kdlab/rng.hpp"
#include "kdlab/tensor.hpp"

using namespace kdlab;

TEST_CASE("lr schedule: warmup from zero, peak at the boundary, decay to zero") {
    // 5 steps at warmup_fraction 0.03 -> warmup = ceil(0.15) = 1 step.
    CHECK(lr_at(0, 5, 2.0, 0.03) == 0.0);
    CHECK(lr_at(1, 5, 2.0, 0.03) == 2.0);
    CHECK(lr_at(5, 5, 2.0, 0.03) == 0.0);

    // Longer run: peak exactly at ceil(0.1 * 100) = 10.
    CHECK(lr_at(10, 100, 3.0, 0.1) == 3.0);
    CHECK(lr_at(100, 100, 3.0, 0.1) == 0.0);
    CHECK(lr_at(0, 100, 3.0, 0.1) == 0.0);

    // Strictly increasing through warmup, strictly decreasing after it.
    for (int64_t s = 1; s <= 10; ++s) CHECK(lr_at(s, 100, 3.0, 0.1) > lr_at(s - 1, 100, 3.0, 0.1));
    for (int64_t s = 11; s <= 100; ++s) CHECK(lr_at(s, 100, 3.0, 0.1) < lr_at(s - 1, 100, 3.0, 0.1));

    // No warmup means the decay line starts at the peak.
    CHECK(lr_at(0, 10, 1.5, 0.0) == 1.5);
    CHECK(lr_at(5, 10, 1.5, 0.0) == doctest::Approx(0.75).epsilon(1e-12));

    // Zero-length run never produces a nonzero rate.
    CHECK(lr_at(0, 0, 1.0, 0.1) == 0.0);

    CHECK_THROWS_AS(lr_at(6, 5, 1.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(-1, 5, 1.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(2, 5, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(2, 5, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("adam: zero gradients leave parameters bit-identical") {
    std::map<std::string, Tensor<double>> params;
    params.emplace("w", Tensor<double>::from_vector({2, 2}, {1.0, -2.0, 3.5, 0.25}));
    const Tensor<double> before = params.at("w");

    std::map<std::string, std::vector<double>> grads;
    grads["w"] = std::vector<double>(4, 0.0);
    AdamStateD state;
    for (int i = 0; i < 10; ++i) adam_step(params, grads, state, 0.05);
    CHECK(state.step == 10);
    for (size_t i = 0; i < before.data.size(); ++i) {
        CHECK(params.at("w").data[i] == before.data[i]);
    }
}

TEST_CASE("adam: two-step scalar trace matches the closed-form update") {
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 0.1;
    const double g1 = 0.5, g2 = -0.25;
    double theta = 1.0;

    // Step 1 written out longhand.
    double m = (1.0 - beta1) * g1;
    double v = (1.0 - beta2) * g1 * g1;
    double mhat = m / (1.0 - beta1);
    double vhat = v / (1.0 - beta2);
    theta -= lr * mhat / (std::sqrt(vhat) + eps);

    // Step 2.
    m = beta1 * m + (1.0 - beta1) * g2;
    v = beta2 * v + (1.0 - beta2) * g2 * g2;
    mhat = m / (1.0 - beta1 * beta1);
    vhat = v / (1.0 - beta2 * beta2);
    theta -= lr * mhat / (std::sqrt(vhat) + eps);

    std::map<std::string, Tensor<double>> params;
    params.emplace("w", Tensor<double>::from_vector({1}, {1.0}));
    AdamStateD state;
    std::map<std::string, std::vector<double>> grads;
    grads["w"] = {g1};
    adam_step(params, grads, state, lr);
    // The first update moves by almost exactly lr, whatever the gradient scale.
    CHECK(params.at("w").data[0] == doctest::Approx(1.0 - lr).epsilon(1e-7));
    grads["w"] = {g2};
    adam_step(params, grads, state, lr);

    CHECK(params.at("w").data[0] == doctest::Approx(theta).epsilon(1e-9));
}

TEST_CASE("adam: identical inputs give bit-identical trajectories") {
    auto run = [] {
        Rng rng(555);
        std::map<std::string, Tensor<double>> params;
        Tensor<double> w = Tensor<double>::zeros({3, 3});
        for (double& x : w.data) x = rng.normal() * 0.5;
        params.emplace("w", w);
        AdamStateD state;
        for (int step = 0; step < 25; ++step) {
            std::map<std::string, std::vector<double>> grads;
            std::vector<double> g(9);
            for (double& x : g) x = rng.normal();
            grads["w"] = g;
            adam_step(params, grads, state, 0.01);
        }
        return params.at("w").data;
    };
    CHECK(run() == run());
}

TEST_CASE("adam: unknown parameters and shape mismatches are rejected") {
    std::map<std::string, Tensor<double>> params;
    params.emplace("w", Tensor<double>::from_vector({2}, {1.0, 2.0}));
    AdamStateD state;

    std::map<std::string, std::vector<double>> bad_name;
    bad_name["nope"] = {0.1};
    CHECK_THROWS_AS(adam_step(params, bad_name, state, 0.1), std::invalid_argument);

    std::map<std::string, std::vector<double>> bad_shape;
    bad_shape["w"] = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(adam_step(params, bad_shape, state, 0.1), std::invalid_argument);
}

TEST_CASE("adam: parameters without a gradient entry are untouched") {
    std::map<std::string, Tensor<double>> params;
    params.emplace("a", Tensor<double>::from_vector({1}, {1.0}));
    params.emplace("b", Tensor<double>::from_vector({1}, {2.0}));
    AdamStateD state;
    std::map<std::string, std::vector<double>> grads;
    grads["a"] = {1.0};
    adam_step(params, grads, state, 0.1);
    CHECK(params.at("a").data[0] != 1.0);
    CHECK(params.at("b").data[0] == 2.0);
}

TEST_CASE("gradient clipping scales to the cap and preserves direction") {
    std::map<std::string, std::vector<double>> grads;
    grads["a"] = {3.0, 0.0};
    grads["b"] = {0.0, 4.0};  // global norm 5

    auto copy = grads;
    const double pre = clip_grads(copy, 1.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(global_grad_norm(copy) == doctest::Approx(1.0).epsilon(1e-12));
    // Direction preserved: every entry scaled by the same factor.
    CHECK(copy["a"][0] == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
    CHECK(copy["b"][1] == doctest::Approx(4.0 / 5.0).epsilon(1e-12));

    // Under the cap: untouched.
    auto mild = grads;
    const double pre2 = clip_grads(mild, 10.0);
    CHECK(pre2 == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(mild["a"][0] == 3.0);
    CHECK(mild["b"][1] == 4.0);

    // Non-positive cap disables clipping entirely.
    auto off = grads;
    CHECK(clip_grads(off, 0.0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(off["a"][0] == 3.0);
    CHECK(clip_grads(off, -1.0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(off["b"][1] == 4.0);
}
