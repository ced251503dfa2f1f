// Finite-difference validation of every primitive (first order, 100 random
// instances each) and of the double-backprop path used by the explanation
// losses (second order).
#include <doctest.h>

#include <cmath>
#include <functional>

#include "xilab/ops.hpp"

#include "oracles.hpp"

using namespace xilab::autodiff;
using oracles::ScalarFn;

namespace {

constexpr double kStep = 1e-4;
constexpr double kTol = 1e-4;

// Weighted sum with weights drawn from a fixed seed, so the scalar function
// is deterministic across repeated finite-difference evaluations while the
// full Jacobian is still exercised.
Tensor weigh(const Tensor& t, std::uint64_t seed) {
    xilab::rng::Engine weng(seed);
    Tensor w = Tensor::from_data(t.shape(), oracles::rand_vec(static_cast<std::size_t>(t.numel()), weng));
    return sum_all(mul(t, w));
}

void check_primitive(const char* name, int instances,
                     const std::function<double(xilab::rng::Engine&)>& one) {
    xilab::rng::Engine eng(0xD1CEu ^ static_cast<std::uint64_t>(name[0] * 131 + name[1]));
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) worst = std::max(worst, one(eng));
    INFO(name << " worst relative error " << worst);
    CHECK(worst < kTol);
}

} // namespace

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("elementwise and reduction primitives pass 100-instance FD checks") {
    auto simple = [&](const char* name, auto builder) {
        check_primitive(name, 100, [&](xilab::rng::Engine& eng) {
            const int n = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
            const int m = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
            const std::uint64_t wseed = eng();
            std::vector<Shape> shapes{{n, m}, {n, m}};
            std::vector<std::vector<double>> data{
                oracles::rand_vec_separated(std::size_t(n) * m, eng, -1.0, 1.0, 5e-4),
                oracles::rand_vec(std::size_t(n) * m, eng, 0.5, 2.0)}; // safe divisor range
            ScalarFn f = [builder, wseed, n, m](const std::vector<Tensor>& in) {
                return builder(in, wseed, n, m);
            };
            return oracles::gradcheck(f, shapes, data, kStep, 0, eng).max_rel;
        });
    };

    simple("add", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(add(in[0], in[1]), wseed);
    });
    simple("sub", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(sub(in[0], in[1]), wseed);
    });
    simple("mul", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(mul(in[0], in[1]), wseed);
    });
    simple("div", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(div(in[0], in[1]), wseed);
    });
    simple("neg_scale_exp", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(exp(scale(neg(in[0]), 0.7)), wseed);
    });
    simple("relu", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(relu(in[0]), wseed); // data separated from 0 below
    });
    simple("sum_expand", [](const std::vector<Tensor>& in, std::uint64_t wseed, int n, int m) {
        return weigh(expand_scalar(sum_all(in[0]), {n, m}), wseed);
    });
    simple("row_col_sums", [](const std::vector<Tensor>& in, std::uint64_t wseed, int n, int m) {
        Tensor t = add(expand_cols(row_sum(in[0]), m), expand_rows(col_sum(in[1]), n));
        return weigh(t, wseed);
    });
    simple("transpose_reshape", [](const std::vector<Tensor>& in, std::uint64_t wseed, int n, int m) {
        return weigh(reshape(transpose(in[0]), {n * m}), wseed);
    });
    simple("log_softmax", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(log_softmax(in[0]), wseed);
    });
    simple("rowwise_max_positive", [](const std::vector<Tensor>& in, std::uint64_t wseed, int, int) {
        return weigh(rowwise_max_positive(in[0]), wseed);
    });
    simple("reduce_max", [](const std::vector<Tensor>& in, std::uint64_t, int, int) {
        return reduce_max(in[0]);
    });
}

TEST_CASE("matmul and dense pass FD checks") {
    check_primitive("matmul", 100, [](xilab::rng::Engine& eng) {
        const int n = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        const int d = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        const int e = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        std::vector<Shape> shapes{{n, d}, {d, e}, {e}};
        std::vector<std::vector<double>> data{oracles::rand_vec(std::size_t(n) * d, eng),
                                              oracles::rand_vec(std::size_t(d) * e, eng),
                                              oracles::rand_vec(std::size_t(e), eng)};
        const std::uint64_t wseed = eng();
        ScalarFn f = [wseed](const std::vector<Tensor>& in) {
            return weigh(dense(in[0], in[1], in[2]), wseed);
        };
        return oracles::gradcheck(f, shapes, data, kStep, 0, eng).max_rel;
    });
}

TEST_CASE("conv2d trio passes FD checks") {
    check_primitive("conv2d", 100, [](xilab::rng::Engine& eng) {
        const int n = 1 + static_cast<int>(xilab::rng::uniform_int(eng, 2));
        const int c = 1 + static_cast<int>(xilab::rng::uniform_int(eng, 2));
        const int k = 1 + static_cast<int>(xilab::rng::uniform_int(eng, 2));
        const int h = 5 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        const int w = 5 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        std::vector<Shape> shapes{{n, c, h, w}, {k, c, 3, 3}, {k}};
        std::vector<std::vector<double>> data{
            oracles::rand_vec(std::size_t(n) * c * h * w, eng),
            oracles::rand_vec(std::size_t(k) * c * 9, eng),
            oracles::rand_vec(std::size_t(k), eng)};
        const std::uint64_t wseed = eng();
        ScalarFn f = [wseed](const std::vector<Tensor>& in) {
            return weigh(conv2d(in[0], in[1], in[2]), wseed);
        };
        return oracles::gradcheck(f, shapes, data, kStep, 0, eng).max_rel;
    });
}

TEST_CASE("pooling and upsampling pass FD checks") {
    check_primitive("pool_upsample", 100, [](xilab::rng::Engine& eng) {
        const int n = 1 + static_cast<int>(xilab::rng::uniform_int(eng, 2));
        const int c = 1 + static_cast<int>(xilab::rng::uniform_int(eng, 2));
        std::vector<Shape> shapes{{n, c, 6, 6}};
        std::vector<std::vector<double>> data{
            oracles::rand_vec_separated(std::size_t(n) * c * 36, eng, -1.0, 1.0, 5e-4)};
        const std::uint64_t wseed = eng();
        ScalarFn f = [wseed](const std::vector<Tensor>& in) {
            return weigh(upsample_bilinear(max_pool2d(in[0]), 7, 7), wseed);
        };
        return oracles::gradcheck(f, shapes, data, kStep, 0, eng).max_rel;
    });
}

TEST_CASE("gather/scatter primitives pass FD checks") {
    check_primitive("gather_scatter", 100, [](xilab::rng::Engine& eng) {
        const int n = 2 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        const int c = 3 + static_cast<int>(xilab::rng::uniform_int(eng, 3));
        std::vector<int> labels;
        for (int i = 0; i < n; ++i)
            labels.push_back(static_cast<int>(xilab::rng::uniform_int(eng, static_cast<std::uint64_t>(c))));
        std::vector<Shape> shapes{{n, c}};
        std::vector<std::vector<double>> data{oracles::rand_vec(std::size_t(n) * c, eng)};
        const std::uint64_t wseed = eng();
        ScalarFn f = [wseed, labels, c](const std::vector<Tensor>& in) {
            Tensor picked = gather_labels(in[0], labels);
            Tensor spread = scatter_labels(picked, labels, c);
            return weigh(spread, wseed);
        };
        return oracles::gradcheck(f, shapes, data, kStep, 0, eng).max_rel;
    });
}

TEST_CASE("full CNN loss gradient matches FD on 25 random parameters") {
    xilab::rng::Engine eng(0xCAFE);
    // reduced-width CNN assembled from raw ops: conv-relu-pool-conv-relu-pool-fc-relu-fc
    const int c1 = 2, c2 = 3, hidden = 8, classes = 4;
    std::vector<Shape> shapes{
        {c1, 1, 5, 5}, {c1}, {c2, c1, 5, 5}, {c2}, {c2 * 16, hidden}, {hidden}, {hidden, classes}, {classes}};
    std::vector<std::vector<double>> data;
    for (const auto& s : shapes) data.push_back(oracles::rand_vec(std::size_t(numel_of(s)), eng, -0.3, 0.3));

    const int batch = 2;
    Tensor x = Tensor::from_data({batch, 1, 28, 28}, oracles::rand_vec(std::size_t(batch) * 784, eng, 0.0, 1.0));
    std::vector<int> labels{1, 3};

    ScalarFn f = [&](const std::vector<Tensor>& p) {
        Tensor h1 = max_pool2d(relu(conv2d(x, p[0], p[1])));
        Tensor h2 = max_pool2d(relu(conv2d(h1, p[2], p[3])));
        Tensor flat = reshape(h2, {batch, c2 * 16});
        Tensor h3 = relu(dense(flat, p[4], p[5]));
        Tensor logits = dense(h3, p[6], p[7]);
        return cross_entropy(logits, labels);
    };
    auto rep = oracles::gradcheck(f, shapes, data, kStep, 4, eng);
    CHECK(rep.coords_checked >= 25);
    CHECK(rep.max_rel < kTol);
}

TEST_CASE("second-order: penalized input-gradient scalar differentiates w.r.t. parameters") {
    // s(theta) = sum((M * d/dx sum_k log softmax f(x))^2), checked against FD
    // of the first-order evaluation. Tiny widths keep FD affordable.
    xilab::rng::Engine eng(0xBEEF);
    const int c1 = 2, c2 = 2, hidden = 6, classes = 3, batch = 1;
    std::vector<Shape> shapes{
        {c1, 1, 5, 5}, {c1}, {c2, c1, 5, 5}, {c2}, {c2 * 16, hidden}, {hidden}, {hidden, classes}, {classes}};
    std::vector<std::vector<double>> data;
    for (const auto& s : shapes) data.push_back(oracles::rand_vec(std::size_t(numel_of(s)), eng, -0.3, 0.3));

    auto xv = oracles::rand_vec(std::size_t(batch) * 784, eng, 0.0, 1.0);
    std::vector<double> mask(784, 0.0);
    for (int i = 0; i < 60; ++i) mask[xilab::rng::uniform_int(eng, 784)] = 1.0;
    Tensor m = Tensor::from_data({batch, 1, 28, 28}, mask);

    ScalarFn s_fn = [&](const std::vector<Tensor>& p) {
        Tensor x = Tensor::leaf({batch, 1, 28, 28}, xv);
        Tensor h1 = max_pool2d(relu(conv2d(x, p[0], p[1])));
        Tensor h2 = max_pool2d(relu(conv2d(h1, p[2], p[3])));
        Tensor flat = reshape(h2, {batch, c2 * 16});
        Tensor logits = dense(relu(dense(flat, p[4], p[5])), p[6], p[7]);
        Tensor summed = sum_all(log_softmax(logits));
        Tensor gx = backward(summed, {x}, /*retain_higher_order=*/true)[0];
        Tensor masked = mul(gx, m);
        return sum_all(mul(masked, masked));
    };
    auto rep = oracles::gradcheck(s_fn, shapes, data, 1e-3, 3, eng);
    INFO("second-order worst relative error " << rep.max_rel);
    CHECK(rep.max_rel < 1e-3);
}

TEST_SUITE_END();
