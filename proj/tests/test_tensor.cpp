#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "seqseg/gradsuite.hpp"
#include "seqseg/ops.hpp"

using namespace seqseg;

namespace {

Tensor randn(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : t.data) v = g(rng);
    return t;
}

}  // namespace

TEST_CASE("tensor shape checks") {
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 2}, {1.0, 2.0, 3.0}), ShapeError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.data[0] == 0.0);
}

TEST_CASE("conv2d identity kernel") {
    Tensor input = Tensor::full({1, 3, 3}, 1.0);
    Tensor kernel = Tensor::full({1, 1, 1, 1}, 1.0);
    std::vector<double> bias{0.0};
    Tensor out = conv2d(input, kernel, bias, 1, 0);
    REQUIRE(out.shape == std::vector<int>{1, 3, 3});
    for (double v : out.data) CHECK(v == 1.0);
}

TEST_CASE("conv2d 3x3 sum window") {
    Tensor input({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor kernel = Tensor::full({1, 1, 3, 3}, 1.0);
    std::vector<double> bias{0.0};
    Tensor out = conv2d(input, kernel, bias, 1, 1);
    CHECK(out.at(0, 1, 1) == 45.0);
}

TEST_CASE("conv2d shape formula stride 2") {
    Tensor input = randn({1, 4, 4}, 1);
    Tensor kernel = randn({1, 1, 2, 2}, 2);
    std::vector<double> bias{0.0};
    Tensor out = conv2d(input, kernel, bias, 2, 0);
    CHECK(out.shape == std::vector<int>{1, 2, 2});
}

TEST_CASE("conv2d channel mismatch names shapes") {
    Tensor input = randn({2, 4, 4}, 1);
    Tensor kernel = randn({1, 3, 3, 3}, 2);
    std::vector<double> bias{0.0};
    CHECK_THROWS_AS(conv2d(input, kernel, bias, 1, 1), ShapeError);
}

TEST_CASE("deconv2d block replication") {
    Tensor input({1, 2, 2}, {1, 2, 3, 4});
    Tensor kernel = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor out = deconv2d(input, kernel, 2, 0);
    REQUIRE(out.shape == std::vector<int>{1, 4, 4});
    CHECK(out.at(0, 0, 0) == 1.0);
    CHECK(out.at(0, 0, 1) == 1.0);
    CHECK(out.at(0, 1, 1) == 1.0);
    CHECK(out.at(0, 0, 2) == 2.0);
    CHECK(out.at(0, 2, 0) == 3.0);
    CHECK(out.at(0, 3, 3) == 4.0);
}

TEST_CASE("deconv2d identity") {
    Tensor input = randn({1, 3, 3}, 5);
    Tensor kernel = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor out = deconv2d(input, kernel, 1, 0);
    for (std::size_t i = 0; i < input.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(input.data[i]));
}

TEST_CASE("deconv2d shape formula") {
    Tensor input = randn({1, 3, 3}, 6);
    Tensor kernel = randn({1, 1, 4, 4}, 7);
    Tensor out = deconv2d(input, kernel, 2, 1);
    CHECK(out.shape == std::vector<int>{1, 6, 6});
}

TEST_CASE("conv/deconv adjointness") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor u = randn({2, 8, 8}, seed * 3 + 1);
        Tensor kernel = randn({3, 2, 4, 4}, seed * 3 + 2);  // conv layout [Co,Ci,kh,kw]
        std::vector<double> bias(3, 0.0);
        Tensor cu = conv2d(u, kernel, bias, 2, 1);
        Tensor v = randn(cu.shape, seed * 3 + 3);

        // deconv kernel layout is [Ci,Co,kh,kw], so the conv kernel
        // [3,2,4,4] is read directly as a 3-in 2-out deconv kernel
        Tensor dv = deconv2d(v, kernel, 2, 1);
        CHECK(dot(cu, v) == doctest::Approx(dot(u, dv)).epsilon(1e-10));
    }
}

TEST_CASE("maxpool2d basics") {
    Tensor input({1, 2, 2}, {1, 2, 3, 4});
    MaxPoolResult r = maxpool2d(input, 2, 2);
    CHECK(r.output.data == std::vector<double>{4.0});
    CHECK(r.argmax == std::vector<std::int64_t>{3});
}

TEST_CASE("maxpool2d constant tie-break to first index") {
    Tensor input = Tensor::full({1, 4, 4}, 2.5);
    MaxPoolResult r = maxpool2d(input, 2, 2);
    for (double v : r.output.data) CHECK(v == 2.5);
    CHECK(r.argmax[0] == 0);
    CHECK(r.argmax[1] == 2);
}

TEST_CASE("maxpool2d ramp") {
    Tensor input({1, 4, 4});
    for (int i = 0; i < 16; ++i) input.data[static_cast<std::size_t>(i)] = i + 1;
    MaxPoolResult r = maxpool2d(input, 2, 2);
    CHECK(r.output.data == std::vector<double>{6, 8, 14, 16});
}

TEST_CASE("maxpool2d window larger than input") {
    Tensor input = randn({1, 2, 2}, 3);
    CHECK_THROWS_AS(maxpool2d(input, 3, 3), ShapeError);
}

TEST_CASE("maxpool2d backward conserves gradient mass") {
    Tensor input = randn({2, 6, 6}, 11);
    MaxPoolResult r = maxpool2d(input, 2, 2);
    Tensor g = randn(r.output.shape, 12);
    Tensor back = maxpool2d_backward(g, r, input.shape);
    double in_sum = 0.0, out_sum = 0.0;
    for (double v : g.data) in_sum += v;
    for (double v : back.data) out_sum += v;
    CHECK(out_sum == doctest::Approx(in_sum).epsilon(1e-12));
    // gradient lands only on argmax positions
    int nonzero = 0;
    for (double v : back.data) nonzero += v != 0.0;
    CHECK(nonzero <= static_cast<int>(r.argmax.size()));
}

TEST_CASE("batchnorm constant input normalizes to beta") {
    std::vector<Tensor> xs{Tensor::full({1, 3, 3}, 7.0), Tensor::full({1, 3, 3}, 7.0)};
    std::vector<double> gamma{1.0}, beta{0.0};
    BNState state{{0.0}, {1.0}};
    std::vector<Tensor> ys =
        batchnorm(xs, gamma, beta, state, BNMode::Train, 1e-5, 0.9, nullptr);
    for (const Tensor& y : ys)
        for (double v : y.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("batchnorm plus-minus-one stays fixed") {
    Tensor x({1, 1, 2}, {-1.0, 1.0});
    std::vector<double> gamma{1.0}, beta{0.0};
    BNState state{{0.0}, {1.0}};
    std::vector<Tensor> ys = batchnorm({x}, gamma, beta, state, BNMode::Train, 1e-5, 0.9,
                                       nullptr);
    CHECK(ys[0].data[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(ys[0].data[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("batchnorm running stats feed infer mode") {
    Tensor x({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    std::vector<double> gamma{1.0}, beta{0.0};
    BNState state{{0.0}, {1.0}};
    for (int i = 0; i < 200; ++i)
        batchnorm({x}, gamma, beta, state, BNMode::Train, 1e-5, 0.9, nullptr);
    // converged running stats reproduce the batch normalization
    std::vector<Tensor> train =
        batchnorm({x}, gamma, beta, state, BNMode::Train, 1e-5, 0.9, nullptr);
    std::vector<Tensor> infer =
        batchnorm({x}, gamma, beta, state, BNMode::Infer, 1e-5, 0.9, nullptr);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(infer[0].data[i] == doctest::Approx(train[0].data[i]).epsilon(1e-3));
}

TEST_CASE("activations at reference points") {
    Tensor x({1, 1, 3}, {-2.0, 0.0, 3.0});
    Tensor relu = activation(x, Activation::Relu);
    CHECK(relu.data == std::vector<double>{0.0, 0.0, 3.0});
    Tensor sig = activation(x, Activation::Sigmoid);
    CHECK(sig.data[1] == doctest::Approx(0.5));
    Tensor th = activation(x, Activation::Tanh);
    CHECK(th.data[1] == doctest::Approx(0.0));
}

TEST_CASE("concat_channels") {
    Tensor a = randn({2, 2, 2}, 1);
    Tensor b = randn({3, 2, 2}, 2);
    Tensor c = randn({1, 2, 2}, 3);
    Tensor cat = concat_channels({a, b, c});
    REQUIRE(cat.shape == std::vector<int>{6, 2, 2});
    CHECK(cat.at(0, 1, 1) == a.at(0, 1, 1));
    CHECK(cat.at(2, 0, 0) == b.at(0, 0, 0));
    CHECK(cat.at(5, 1, 0) == c.at(0, 1, 0));

    Tensor solo = concat_channels({a});
    CHECK(solo.data == a.data);

    Tensor bad = randn({1, 3, 2}, 4);
    CHECK_THROWS_AS(concat_channels({a, bad}), ShapeError);

    std::vector<Tensor> split = concat_channels_backward(cat, {2, 3, 1});
    CHECK(split[0].data == a.data);
    CHECK(split[1].data == b.data);
    CHECK(split[2].data == c.data);
}

TEST_CASE("grad_check rejects bad perturbation") {
    auto f = [](const std::vector<double>& x) { return x[0] * x[0]; };
    GradCheckOptions opt;
    opt.perturbation = 1e-2;
    CHECK_THROWS_AS(grad_check(f, {1.0}, {2.0}, opt), InputError);
}

TEST_CASE("grad_check flags non-finite objective") {
    auto f = [](const std::vector<double>& x) { return 1.0 / (x[0] - x[0]); };
    CHECK_THROWS_AS(grad_check(f, {1.0}, {0.0}), NumericError);
}

TEST_CASE("op gradient suite, 20 seeds") {
    for (const GradSuiteEntry& e : gradcheck_tensor_ops(20)) {
        INFO(e.name);
        CHECK(e.max_rel_error < e.tolerance);
    }
}
