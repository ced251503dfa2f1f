#include <doctest.h>

#include <cmath>

#include "xilab/ops.hpp"

#include "oracles.hpp"

using namespace xilab::autodiff;

TEST_SUITE_BEGIN("ops");

TEST_CASE("conv2d output shape matches the 28x28 architecture") {
    Tensor x = Tensor::zeros({1, 1, 28, 28});
    Tensor k = Tensor::zeros({20, 1, 5, 5});
    Tensor b = Tensor::zeros({20});
    Tensor y = conv2d(x, k, b);
    CHECK(y.shape() == Shape{1, 20, 24, 24});
}

TEST_CASE("conv2d with all-zero kernels yields all-bias output") {
    xilab::rng::Engine eng(3);
    Tensor x = Tensor::from_data({2, 1, 8, 8}, oracles::rand_vec(128, eng));
    Tensor k = Tensor::zeros({3, 1, 5, 5});
    Tensor b = Tensor::from_data({3}, {0.5, -1.0, 2.0});
    Tensor y = conv2d(x, k, b);
    auto yv = y.values();
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i)
                CHECK(yv[std::size_t((n * 3 + c) * 16 + i)] == b.values()[std::size_t(c)]);
}

TEST_CASE("conv2d matches sliding-window oracle") {
    xilab::rng::Engine eng(5);
    auto xs = oracles::rand_vec(36, eng);
    auto ks = oracles::rand_vec(25, eng);
    Tensor y = conv2d_raw(Tensor::from_data({1, 1, 6, 6}, xs), Tensor::from_data({1, 1, 5, 5}, ks));
    auto want = oracles::naive_conv2d(xs, 1, 1, 6, 6, ks, 1, 5, 5, {});
    REQUIRE(y.numel() == 4);
    for (int i = 0; i < 4; ++i) CHECK(y.values()[std::size_t(i)] == doctest::Approx(want[std::size_t(i)]).epsilon(1e-12));
}

TEST_CASE("conv2d batched multi-channel matches oracle") {
    xilab::rng::Engine eng(9);
    const int n = 2, c = 3, h = 7, w = 6, k = 4;
    auto xs = oracles::rand_vec(std::size_t(n * c * h * w), eng);
    auto ks = oracles::rand_vec(std::size_t(k * c * 25), eng);
    auto bs = oracles::rand_vec(std::size_t(k), eng);
    Tensor y = conv2d(Tensor::from_data({n, c, h, w}, xs), Tensor::from_data({k, c, 5, 5}, ks),
                      Tensor::from_data({k}, bs));
    auto want = oracles::naive_conv2d(xs, n, c, h, w, ks, k, 5, 5, bs);
    REQUIRE(y.numel() == static_cast<std::int64_t>(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects channel mismatch with the offending dimension") {
    Tensor x = Tensor::zeros({1, 3, 8, 8});
    Tensor k = Tensor::zeros({2, 4, 5, 5});
    try {
        conv2d_raw(x, k);
        FAIL("expected ShapeError");
    } catch (const xilab::ShapeError& e) {
        CHECK(e.dim() == 1);
    }
}

TEST_CASE("max_pool2d halves spatial extent") {
    Tensor x = Tensor::zeros({1, 1, 24, 24});
    CHECK(max_pool2d(x).shape() == Shape{1, 1, 12, 12});
    CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 1, 5, 4})), xilab::ShapeError);
}

TEST_CASE("max_pool2d constant input routes gradient to first window element") {
    Tensor x = Tensor::leaf({1, 1, 4, 4}, std::vector<double>(16, 3.0));
    Tensor y = max_pool2d(x);
    for (double v : y.values()) CHECK(v == 3.0);
    auto g = backward(sum_all(y), {x});
    // row-major first element of each 2x2 window
    std::vector<double> want{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
    for (int i = 0; i < 16; ++i) CHECK(g[0].values()[std::size_t(i)] == want[std::size_t(i)]);
}

TEST_CASE("max_pool2d picks known window maxima") {
    // windows: {1,5,2,0} {3,-1,4,2} / {7,0,1,2} {0,3,9,1}
    std::vector<double> xs{1, 5, 3, -1, 2, 0, 4, 2, 7, 0, 0, 3, 1, 2, 9, 1};
    Tensor y = max_pool2d(Tensor::from_data({1, 1, 4, 4}, xs));
    CHECK(y.values()[0] == 5.0);
    CHECK(y.values()[1] == 4.0);
    CHECK(y.values()[2] == 7.0);
    CHECK(y.values()[3] == 9.0);
}

TEST_CASE("relu examples") {
    Tensor a = relu(Tensor::from_data({3}, {-1.0, -0.5, -2.0}));
    for (double v : a.values()) CHECK(v == 0.0);
    Tensor b = relu(Tensor::from_data({3}, {1.0, 0.5, 2.0}));
    CHECK(b.values()[2] == 2.0);
    Tensor c = relu(Tensor::from_data({3}, {-1.0, 0.0, 2.0}));
    CHECK(c.values()[0] == 0.0);
    CHECK(c.values()[1] == 0.0);
    CHECK(c.values()[2] == 2.0);
}

TEST_CASE("relu derivative at zero is zero") {
    Tensor x = Tensor::leaf({3}, {-1.0, 0.0, 2.0});
    auto g = backward(sum_all(relu(x)), {x});
    CHECK(g[0].values()[0] == 0.0);
    CHECK(g[0].values()[1] == 0.0);
    CHECK(g[0].values()[2] == 1.0);
}

TEST_CASE("dense identity and shift examples") {
    Tensor x = Tensor::from_data({1, 2}, {3.0, -4.0});
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor zero_b = Tensor::zeros({2});
    Tensor y = dense(x, eye, zero_b);
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == -4.0);

    Tensor ones_b = Tensor::ones({2});
    Tensor y2 = dense(x, eye, ones_b);
    CHECK(y2.values()[0] == 4.0);
    CHECK(y2.values()[1] == -3.0);
}

TEST_CASE("dense matches triple-loop matmul oracle") {
    xilab::rng::Engine eng(13);
    auto a = oracles::rand_vec(12, eng);
    auto b = oracles::rand_vec(8, eng);
    Tensor y = matmul(Tensor::from_data({3, 4}, a), Tensor::from_data({4, 2}, b));
    auto want = oracles::naive_matmul(a, b, 3, 4, 2);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-13));
    CHECK_THROWS_AS(matmul(Tensor::zeros({3, 4}), Tensor::zeros({5, 2})), xilab::ShapeError);
}

TEST_CASE("cross_entropy of uniform logits is ln(10)") {
    Tensor logits = Tensor::full({4, 10}, 0.7);
    std::vector<int> labels{0, 3, 9, 5};
    CHECK(cross_entropy(logits, labels).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy approaches zero for confident correct logits") {
    double prev = 1e9;
    for (double mag : {5.0, 20.0, 60.0}) {
        std::vector<double> ls(10, 0.0);
        ls[4] = mag;
        double loss = cross_entropy(Tensor::from_data({1, 10}, ls), {4}).item();
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-20);
}

TEST_CASE("cross_entropy matches extended-precision formula") {
    xilab::rng::Engine eng(17);
    auto logits = oracles::rand_vec(20, eng, -5.0, 5.0);
    std::vector<int> labels{7, 2};
    double got = cross_entropy(Tensor::from_data({2, 10}, logits), labels).item();
    double want = oracles::cross_entropy_direct(logits, 2, 10, labels);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
    Tensor logits = Tensor::zeros({2, 10});
    CHECK_THROWS_AS(cross_entropy(logits, {0, 10}), xilab::ShapeError);
    CHECK_THROWS_AS(cross_entropy(logits, {-1, 3}), xilab::ShapeError);
}

TEST_CASE("log_softmax rows are normalized") {
    xilab::rng::Engine eng(23);
    Tensor x = Tensor::from_data({3, 7}, oracles::rand_vec(21, eng, -30, 30));
    Tensor ls = log_softmax(x);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) s += std::exp(ls.values()[std::size_t(i * 7 + j)]);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reduce_max takes first maximum in row-major order") {
    Tensor x = Tensor::leaf({2, 2}, {3.0, 7.0, 7.0, 1.0});
    Tensor m = reduce_max(x);
    CHECK(m.item() == 7.0);
    auto g = backward(m, {x});
    CHECK(g[0].values()[1] == 1.0);
    CHECK(g[0].values()[2] == 0.0);
}

TEST_CASE("rowwise_max_positive handles all-nonpositive rows") {
    Tensor x = Tensor::leaf({2, 3}, {-1.0, -2.0, 0.0, 0.5, 2.0, 2.0});
    Tensor m = rowwise_max_positive(x);
    CHECK(m.values()[0] == 1.0); // no positive entry -> 1.0, no gradient
    CHECK(m.values()[1] == 2.0);
    auto g = backward(sum_all(m), {x});
    for (int j = 0; j < 3; ++j) CHECK(g[0].values()[std::size_t(j)] == 0.0);
    CHECK(g[0].values()[4] == 1.0); // first of the tied maxima
    CHECK(g[0].values()[5] == 0.0);
}

TEST_CASE("upsample_bilinear preserves constants and adjoint transposes") {
    Tensor c = upsample_bilinear(Tensor::full({1, 1, 8, 8}, 2.5), 28, 28);
    CHECK(c.shape() == Shape{1, 1, 28, 28});
    for (double v : c.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

    // <U x, y> == <x, U^T y> for random x, y
    xilab::rng::Engine eng(29);
    auto xs = oracles::rand_vec(64, eng);
    auto ys = oracles::rand_vec(784, eng);
    Tensor ux = upsample_bilinear(Tensor::from_data({1, 1, 8, 8}, xs), 28, 28);
    Tensor uty = upsample_bilinear_adj(Tensor::from_data({1, 1, 28, 28}, ys), 8, 8);
    double lhs = 0.0, rhs = 0.0;
    for (int i = 0; i < 784; ++i) lhs += ux.values()[std::size_t(i)] * ys[std::size_t(i)];
    for (int i = 0; i < 64; ++i) rhs += xs[std::size_t(i)] * uty.values()[std::size_t(i)];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("reduction/broadcast adjoint pairs agree on random inner products") {
    xilab::rng::Engine eng(31);
    // <row_sum(x), v> == <x, expand_cols(v)>
    auto xs = oracles::rand_vec(12, eng);
    auto vs = oracles::rand_vec(3, eng);
    Tensor x = Tensor::from_data({3, 4}, xs);
    Tensor v = Tensor::from_data({3}, vs);
    double lhs = 0.0;
    for (int i = 0; i < 3; ++i) lhs += row_sum(x).values()[std::size_t(i)] * vs[std::size_t(i)];
    double rhs = 0.0;
    Tensor e = expand_cols(v, 4);
    for (int i = 0; i < 12; ++i) rhs += xs[std::size_t(i)] * e.values()[std::size_t(i)];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_SUITE_END();
