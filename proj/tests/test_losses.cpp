#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "seqseg/gradsuite.hpp"
#include "seqseg/losses.hpp"

using namespace seqseg;

TEST_CASE("jaccard loss hand example") {
    // pred (0.5, 1.0) against truth (1, 0): relaxed intersection 0.5,
    // denominator 1 + 1.0, loss 1 - 0.5/2 = 0.75
    Tensor pred({1, 1, 2}, {0.5, 1.0});
    Tensor truth({1, 1, 2}, {1.0, 0.0});
    LossResult r = jaccard_loss(pred, truth);
    CHECK(r.value == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_FALSE(r.empty_foreground);
}

TEST_CASE("jaccard loss 0.8 on half-confident prediction") {
    // 4 foreground, 12 background, pred all 0.5: 1 - 2/(4+6) = 0.8
    Tensor pred = Tensor::full({1, 4, 4}, 0.5);
    Tensor truth({1, 4, 4});
    for (int i = 0; i < 4; ++i) truth.data[static_cast<std::size_t>(i)] = 1.0;
    CHECK(jaccard_loss(pred, truth).value == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("jaccard loss 1 on all-zero prediction") {
    Tensor pred = Tensor::full({1, 2, 2}, 0.0);
    Tensor truth({1, 2, 2}, {1.0, 1.0, 0.0, 0.0});
    CHECK(jaccard_loss(pred, truth).value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("jaccard foreground gradient dominates background") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor pred({1, 3, 3});
        Tensor truth({1, 3, 3});
        for (std::size_t i = 0; i < 9; ++i) {
            pred.data[i] = u(rng);
            truth.data[i] = i < 3 ? 1.0 : 0.0;
        }
        LossResult r = jaccard_loss(pred, truth);
        double max_bg = 0.0, min_fg = 1e30;
        for (std::size_t i = 0; i < 9; ++i)
            if (truth.data[i] > 0.5)
                min_fg = std::min(min_fg, std::abs(r.grad.data[i]));
            else
                max_bg = std::max(max_bg, std::abs(r.grad.data[i]));
        CHECK(min_fg > max_bg);
    }
}

TEST_CASE("jaccard loss perfect prediction") {
    Tensor truth({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    LossResult r = jaccard_loss(truth, truth);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("jaccard loss closed-form gradient") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::bernoulli_distribution b(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor pred({1, 3, 3});
        Tensor truth({1, 3, 3});
        double fg = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            pred.data[i] = u(rng);
            truth.data[i] = b(rng) ? 1.0 : 0.0;
            fg += truth.data[i];
        }
        if (fg == 0.0) truth.data[0] = 1.0, fg = 1.0;

        double inter = 0.0, bg_sum = 0.0;
        for (std::size_t i = 0; i < 9; ++i)
            (truth.data[i] > 0.5 ? inter : bg_sum) += pred.data[i];
        const double denom = fg + bg_sum;

        LossResult r = jaccard_loss(pred, truth);
        for (std::size_t i = 0; i < 9; ++i) {
            const double expect = truth.data[i] > 0.5
                                      ? -1.0 / denom
                                      : inter / (denom * denom);
            CHECK(std::abs(r.grad.data[i] - expect) < 1e-12);
        }
    }
}

TEST_CASE("jaccard loss empty foreground guard") {
    Tensor pred({1, 1, 2}, {0.3, 0.6});
    Tensor truth({1, 1, 2}, {0.0, 0.0});
    LossResult r = jaccard_loss(pred, truth);
    CHECK(r.empty_foreground);
    // value = S/(1+S) with S the background probability mass
    const double s = 0.9;
    CHECK(r.value == doctest::Approx(s / (1.0 + s)).epsilon(1e-12));
    // pushing background down reduces the loss
    for (double g : r.grad.data) CHECK(g > 0.0);
}

TEST_CASE("cross entropy ln2 reference") {
    Tensor pred({1, 1, 1}, {0.5});
    Tensor truth({1, 1, 1}, {1.0});
    LossResult r = cross_entropy_loss(pred, truth);
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy two-pixel hand value") {
    Tensor pred({1, 1, 2}, {0.9, 0.2});
    Tensor truth({1, 1, 2}, {1.0, 0.0});
    LossResult r = cross_entropy_loss(pred, truth);
    CHECK(r.value == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0).epsilon(1e-9));
}

TEST_CASE("cross entropy clamps extreme predictions") {
    Tensor pred({1, 1, 2}, {0.0, 1.0});
    Tensor truth({1, 1, 2}, {1.0, 0.0});
    LossResult r = cross_entropy_loss(pred, truth);
    CHECK(std::isfinite(r.value));
    for (double g : r.grad.data) CHECK(std::isfinite(g));
}

TEST_CASE("cbce weights counter class imbalance") {
    // 1 foreground, 3 background pixels: fg weight 3/4, bg weight 1/4
    Tensor pred({1, 2, 2}, {0.6, 0.4, 0.4, 0.4});
    Tensor truth({1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
    LossResult r = cbce_loss(pred, truth);
    const double expect =
        (0.75 * -std::log(0.6) + 3.0 * 0.25 * -std::log(0.6)) / 4.0;
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("jaccard loss permutation invariance") {
    Tensor pred({1, 1, 4}, {0.9, 0.2, 0.7, 0.1});
    Tensor truth({1, 1, 4}, {1.0, 0.0, 1.0, 0.0});
    Tensor pred_p({1, 1, 4}, {0.1, 0.7, 0.2, 0.9});
    Tensor truth_p({1, 1, 4}, {0.0, 1.0, 0.0, 1.0});
    CHECK(jaccard_loss(pred, truth).value ==
          doctest::Approx(jaccard_loss(pred_p, truth_p).value).epsilon(1e-15));
}

TEST_CASE("jaccard rewards foreground dominance") {
    // raising predicted foreground probability monotonically lowers loss
    Tensor truth({1, 1, 3}, {1.0, 1.0, 0.0});
    double prev = 2.0;
    for (double p = 0.1; p < 1.0; p += 0.2) {
        Tensor pred({1, 1, 3}, {p, p, 0.2});
        const double v = jaccard_loss(pred, truth).value;
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("deep supervision objective sums unit losses") {
    Tensor truth({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor yhat({1, 2, 2}, {0.8, 0.1, 0.2, 0.9});
    std::vector<Tensor> units{Tensor({1, 2, 2}, {0.7, 0.2, 0.3, 0.8}),
                              Tensor({1, 2, 2}, {0.9, 0.1, 0.1, 0.9})};
    DeepSupervisionResult r =
        deep_supervision_objective(units, yhat, truth, LossKind::Jac);
    const double expect = jaccard_loss(yhat, truth).value +
                          jaccard_loss(units[0], truth).value +
                          jaccard_loss(units[1], truth).value;
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-12));
    REQUIRE(r.grad_units.size() == 2);
    CHECK(r.grad_yhat.shape == yhat.shape);
}

TEST_CASE("threshold sweep constant for binary predictions") {
    std::vector<double> pred{1.0, 0.0, 1.0, 0.0, 1.0};
    std::vector<std::uint8_t> truth{1, 0, 1, 1, 0};
    std::vector<ThresholdDsc> sw =
        threshold_sweep(pred, truth, {0.05, 0.25, 0.5, 0.75, 0.95});
    for (const ThresholdDsc& t : sw) CHECK(t.dsc == doctest::Approx(sw[0].dsc));
}

TEST_CASE("threshold sweep") {
    std::vector<double> pred{0.1, 0.4, 0.6, 0.9};
    std::vector<std::uint8_t> truth{0, 0, 1, 1};
    std::vector<ThresholdDsc> sw = threshold_sweep(pred, truth, {0.25, 0.5, 0.75});
    REQUIRE(sw.size() == 3);
    CHECK(sw[1].dsc == doctest::Approx(1.0));
    // threshold 0.25 admits a false positive
    CHECK(sw[0].dsc == doctest::Approx(2.0 * 2.0 / (3.0 + 2.0)));
    CHECK_THROWS_AS(threshold_sweep(pred, truth, {0.5, 0.4}), InputError);
    CHECK_THROWS_AS(threshold_sweep(pred, truth, {}), InputError);
}

TEST_CASE("loss gradient suite, 20 seeds") {
    for (const GradSuiteEntry& e : gradcheck_losses(20)) {
        INFO(e.name);
        CHECK(e.max_rel_error < e.tolerance);
    }
}
