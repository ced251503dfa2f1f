#include <doctest.h>

#include "xilab/ops.hpp"
#include "xilab/tensor.hpp"

#include "oracles.hpp"

using namespace xilab::autodiff;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("factories and invariants") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.shape() == Shape{2, 3});
    for (double v : z.values()) CHECK(v == 0.0);

    Tensor s = Tensor::scalar(4.5);
    CHECK(s.item() == 4.5);
    CHECK(s.ndim() == 0);

    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), xilab::ShapeError);
    CHECK_THROWS_AS(z.item(), xilab::ShapeError);
}

TEST_CASE("leaf, detach, clone") {
    Tensor a = Tensor::leaf({2}, {1.0, 2.0});
    CHECK(a.tracked());
    Tensor d = a.detach();
    CHECK_FALSE(d.tracked());
    CHECK(d.values().data() == a.values().data()); // shared storage
    Tensor c = a.clone();
    CHECK(c.values().data() != a.values().data());
    CHECK(c.values()[1] == 2.0);
}

TEST_CASE("backward of sum is ones") {
    Tensor x = Tensor::leaf({3, 2}, {1, -2, 3, 4, -5, 6});
    auto grads = backward(sum_all(x), {x});
    for (double v : grads[0].values()) CHECK(v == 1.0);
}

TEST_CASE("backward of sum of squares and second backward") {
    std::vector<double> xs{0.5, -1.5, 2.0};
    Tensor x = Tensor::leaf({3}, xs);
    Tensor y = sum_all(mul(x, x));
    auto g = backward(y, {x}, /*retain_higher_order=*/true);
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(g[0].values()[i] == doctest::Approx(2.0 * xs[i]));

    // d/dx sum(2x) = 2
    auto g2 = backward(sum_all(g[0]), {x});
    for (double v : g2[0].values()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("non-scalar output is rejected") {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0});
    CHECK_THROWS_AS(backward(mul(x, x), {x}), xilab::ShapeError);
}

TEST_CASE("unreachable wrt tensor gets zero gradient") {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0});
    Tensor other = Tensor::leaf({3}, {1.0, 1.0, 1.0});
    auto g = backward(sum_all(x), {x, other});
    CHECK(g[1].shape() == Shape{3});
    for (double v : g[1].values()) CHECK(v == 0.0);
}

TEST_CASE("linearity of backward") {
    xilab::rng::Engine eng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto xs = oracles::rand_vec(8, eng);
        const double a = xilab::rng::uniform(eng, -2, 2);
        const double b = xilab::rng::uniform(eng, -2, 2);
        Tensor x = Tensor::leaf({8}, xs);
        Tensor f = sum_all(mul(x, x));
        Tensor g = sum_all(exp(scale(x, 0.3)));
        Tensor combo = add(scale(f, a), scale(g, b));

        auto gc = backward(combo, {x});
        auto gf = backward(f, {x});
        auto gg = backward(g, {x});
        for (int i = 0; i < 8; ++i) {
            const double want = a * gf[0].values()[i] + b * gg[0].values()[i];
            CHECK(gc[0].values()[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("gradients are bitwise deterministic") {
    xilab::rng::Engine eng(11);
    auto xs = oracles::rand_vec(12, eng);
    auto run = [&]() {
        Tensor x = Tensor::leaf({3, 4}, xs);
        Tensor y = sum_all(mul(relu(x), exp(scale(x, 0.1))));
        return backward(y, {x})[0];
    };
    Tensor g1 = run(), g2 = run();
    for (int i = 0; i < 12; ++i) CHECK(g1.values()[i] == g2.values()[i]);
}

TEST_CASE("graph ids give parents-before-children order") {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0});
    Tensor y = mul(x, x);
    Tensor z = sum_all(y);
    REQUIRE(z.tracked());
    CHECK(z.node()->id > y.node()->id);
    CHECK(y.node()->id > x.node()->id);
    // a retained backward appends nodes after the existing ones
    auto g = backward(z, {x}, true);
    CHECK(g[0].tracked());
    CHECK(g[0].node()->id > z.node()->id);
}

TEST_CASE("NoGradGuard suppresses tracking") {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0});
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.tracked());
}

TEST_SUITE_END();
