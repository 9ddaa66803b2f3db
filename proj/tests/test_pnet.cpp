#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "seqseg/gradsuite.hpp"
#include "seqseg/pnet.hpp"

using namespace seqseg;

namespace {

PNetConfig small_config() {
    PNetConfig c;
    c.unit_count = 2;
    c.channels = 4;
    c.msa_channels = 3;
    return c;
}

Tensor randn(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : t.data) v = g(rng);
    return t;
}

}  // namespace

TEST_CASE("msra init is deterministic and seed sensitive") {
    PNetParams a = make_pnet(small_config());
    PNetParams b = make_pnet(small_config());
    PNetParams c = make_pnet(small_config());
    msra_init(a, 5);
    msra_init(b, 5);
    msra_init(c, 6);
    CHECK(a.units[0].fwd[0].kernel.data == b.units[0].fwd[0].kernel.data);
    CHECK(a.units[0].fwd[0].kernel.data != c.units[0].fwd[0].kernel.data);
}

TEST_CASE("msra init statistics match 2/fan_in") {
    // 64-in-channel 3x3 layer: std = sqrt(2/576)
    PNetConfig cfg;
    cfg.unit_count = 1;
    cfg.channels = 64;
    PNetParams p = make_pnet(cfg);
    msra_init(p, 11);
    const Tensor& k = p.units[0].fwd[1].kernel;  // 64 -> 64
    REQUIRE(k.size() >= 10000);
    double sum = 0.0, sq = 0.0;
    for (double v : k.data) sum += v, sq += v * v;
    const double n = static_cast<double>(k.size());
    const double stdev = std::sqrt(sq / n - (sum / n) * (sum / n));
    const double expect = std::sqrt(2.0 / 576.0);
    CHECK(stdev == doctest::Approx(expect).epsilon(0.05));
    // first layer sees the 3-channel slab: fan_in 27
    const Tensor& k0 = p.units[0].fwd[0].kernel;
    CHECK(k0.dim(1) * k0.dim(2) * k0.dim(3) == 27);
}

TEST_CASE("msra init zeroes biases and normalizes bn affine") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 2);
    for (const auto& u : p.units)
        for (const auto& layer : u.fwd) {
            for (double v : layer.bias) CHECK(v == 0.0);
            for (double v : layer.gamma) CHECK(v == 1.0);
            for (double v : layer.beta) CHECK(v == 0.0);
        }
    for (double v : p.fusion_logits) CHECK(v == 0.0);
}

TEST_CASE("param_count reference values") {
    // default architecture stays under the 3M budget
    PNetParams full = make_pnet(PNetConfig{});
    CHECK(param_count(full) < 3000000);
    CHECK(full.units.size() == 5);

    // count is reproducible across reseeding
    PNetParams a = make_pnet(small_config());
    const std::int64_t before = param_count(a);
    msra_init(a, 123);
    CHECK(param_count(a) == before);

    // hand count for K=1: fwd 4 convs + bn, one 1x1 scale conv, fusion
    PNetConfig c1;
    c1.unit_count = 1;
    c1.channels = 4;
    c1.msa_channels = 3;
    PNetParams p1 = make_pnet(c1);
    const std::int64_t fwd = (4 * 3 * 9 + 4 + 8) + 3 * (4 * 4 * 9 + 4 + 8);
    const std::int64_t scale = 3 * 4;  // 1x1 conv, no bias
    const std::int64_t fusion = 3 + 1;
    const std::int64_t logits = 1;
    CHECK(param_count(p1) == fwd + scale + fusion + logits);
}

TEST_CASE("forward output ranges and shapes") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 17);
    std::vector<Tensor> batch{randn({3, 16, 16}, 3), randn({3, 16, 16}, 4)};
    PNetOutputs out = pnet_forward(p, batch, BNMode::Train);
    REQUIRE(out.unit_probs.size() == 2);
    REQUIRE(out.yhat.size() == 2);
    for (const auto& per_unit : out.unit_probs)
        for (const Tensor& u : per_unit) {
            REQUIRE(u.shape == std::vector<int>{1, 16, 16});
            for (double v : u.data) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
    for (const Tensor& y : out.yhat)
        for (double v : y.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
}

TEST_CASE("zero fusion weights emit 0.5 maps") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 23);
    for (auto& u : p.units) {
        for (double& v : u.fusion_kernel.data) v = 0.0;
        u.fusion_bias[0] = 0.0;
    }
    PNetSliceOutput out = pnet_forward_slice(p, randn({3, 8, 8}, 9), BNMode::Train);
    for (const Tensor& u : out.unit_probs)
        for (double v : u.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    for (double v : out.yhat.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax fusion is a convex combination") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 29);
    // saturate the first logit: yhat converges to U_1
    p.fusion_logits[0] = 40.0;
    Tensor in = randn({3, 8, 8}, 10);
    PNetSliceOutput out = pnet_forward_slice(p, in, BNMode::Train);
    for (std::size_t i = 0; i < out.yhat.data.size(); ++i)
        CHECK(out.yhat.data[i] ==
              doctest::Approx(out.unit_probs[0].data[i]).epsilon(1e-10));
}

TEST_CASE("softmax basics") {
    std::vector<double> s = softmax({0.0, 0.0, 0.0});
    for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0));
    std::vector<double> t = softmax({1000.0, 0.0});
    CHECK(t[0] == doctest::Approx(1.0));  // overflow-safe
}

TEST_CASE("indivisible extents rejected before compute") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 31);
    std::vector<Tensor> batch{randn({3, 9, 9}, 1)};  // 9 not divisible by 2
    CHECK_THROWS_AS(pnet_forward(p, batch, BNMode::Train), ConfigError);
    std::vector<Tensor> wrong_ch{randn({2, 8, 8}, 1)};
    CHECK_THROWS_AS(pnet_forward(p, wrong_ch, BNMode::Train), ShapeError);
}

TEST_CASE("staged k_active uses a prefix of the stack") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 37);
    std::vector<Tensor> batch{randn({3, 8, 8}, 2)};
    PNetOutputs staged = pnet_forward(p, batch, BNMode::Infer, 1);
    CHECK(staged.unit_probs.size() == 1);
    // unit 2's parameters play no role at k_active=1
    PNetParams q = p;
    for (double& v : q.units[1].fwd[0].kernel.data) v += 100.0;
    PNetOutputs staged2 = pnet_forward(q, batch, BNMode::Infer, 1);
    CHECK(staged.yhat[0].data == staged2.yhat[0].data);
}

TEST_CASE("forward is bit deterministic") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 41);
    Tensor in = randn({3, 16, 16}, 5);
    PNetSliceOutput a = pnet_forward_slice(p, in);
    PNetSliceOutput b = pnet_forward_slice(p, in);
    CHECK(a.yhat.data == b.yhat.data);
}

TEST_CASE("train mode advances running stats, infer mode does not") {
    PNetParams p = make_pnet(small_config());
    msra_init(p, 43);
    std::vector<Tensor> batch{randn({3, 8, 8}, 6)};
    const std::vector<double> before = p.units[0].fwd[0].bn_state.running_mean;
    pnet_forward(p, batch, BNMode::Infer);
    CHECK(p.units[0].fwd[0].bn_state.running_mean == before);
    pnet_forward(p, batch, BNMode::Train);
    CHECK(p.units[0].fwd[0].bn_state.running_mean != before);
}

TEST_CASE("pnet gradient suite at K=2 on 8x8") {
    for (const GradSuiteEntry& e : gradcheck_pnet(5)) {
        INFO(e.name);
        CHECK(e.max_rel_error < e.tolerance);
    }
}
