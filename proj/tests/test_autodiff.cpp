#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "seep/autodiff.hpp"
#include "seep/rng.hpp"
#include "support/gradcheck.hpp"

using namespace seep;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
    Rng rng(1, Stream::ParamInit, 0);
    Tensor x = Tensor::constant(Shape{2, 1, 4, 5}, gradcheck::random_values(40, rng));
    Tensor w = Tensor::constant(Shape{1, 1, 1, 1}, {1.0});
    Tensor b = Tensor::constant(Shape{1, 1, 1, 1}, {0.0});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d window sum example") {
    Tensor x = Tensor::constant(Shape{1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor w = Tensor::constant(Shape{1, 1, 2, 2}, std::vector<double>(4, 1.0));
    Tensor b = Tensor::constant(Shape{1, 1, 1, 1}, {0.0});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.values()) CHECK(v == 4.0);
}

TEST_CASE("conv2d output extent follows the floor formula") {
    Tensor x = Tensor::constant(Shape{1, 2, 7, 9}, 0.5);
    Tensor w = Tensor::constant(Shape{3, 2, 3, 3}, 0.1);
    Tensor b = Tensor::constant(Shape{1, 1, 1, 3}, 0.0);
    CHECK(conv2d(x, w, b, 2, 1).shape() == Shape{1, 3, 4, 5});
    CHECK(conv2d(x, w, b, 1, 0).shape() == Shape{1, 3, 5, 7});
    CHECK_THROWS_AS(conv2d(x, Tensor::constant(Shape{3, 1, 3, 3}, 0.1), b, 1, 0), ShapeError);
}

TEST_CASE("transposed conv inverts the extent arithmetic") {
    Tensor x = Tensor::constant(Shape{1, 2, 5, 5}, 1.0);
    Tensor w = Tensor::constant(Shape{2, 3, 3, 3}, 0.1);
    Tensor b = Tensor::constant(Shape{1, 1, 1, 3}, 0.0);
    CHECK(conv2d_transposed(x, w, b, 2, 1, 1).shape() == Shape{1, 3, 10, 10});
    CHECK(conv2d_transposed(x, w, b, 1, 0, 0).shape() == Shape{1, 3, 7, 7});
    CHECK_THROWS_AS(conv2d_transposed(x, w, b, 2, 1, 2), std::invalid_argument);
}

TEST_CASE("transposed conv with unit 1x1 kernel is the identity") {
    Rng rng(2, Stream::ParamInit, 0);
    Tensor x = Tensor::constant(Shape{1, 1, 3, 4}, gradcheck::random_values(12, rng));
    Tensor w = Tensor::constant(Shape{1, 1, 1, 1}, {1.0});
    Tensor b = Tensor::constant(Shape{1, 1, 1, 1}, {0.0});
    Tensor y = conv2d_transposed(x, w, b, 1, 0, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv and transposed conv are adjoint") {
    Rng rng(3, Stream::ParamInit, 0);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            const Shape xs{2, 3, 8, 8};
            Tensor x = Tensor::constant(xs, gradcheck::random_values(xs.count(), rng));
            Tensor w = Tensor::constant(Shape{4, 3, 3, 3}, gradcheck::random_values(108, rng));
            Tensor zb_out = Tensor::constant(Shape{1, 1, 1, 4}, 0.0);
            Tensor zb_in = Tensor::constant(Shape{1, 1, 1, 3}, 0.0);

            Tensor cx = conv2d(x, w, zb_out, stride, pad);
            const Shape ys = cx.shape();
            Tensor y = Tensor::constant(ys, gradcheck::random_values(ys.count(), rng));

            const int oph = xs.h - ((ys.h - 1) * stride - 2 * pad + 3);
            if (oph < 0 || oph >= stride) continue;
            Tensor ty = conv2d_transposed(y, w, zb_in, stride, pad, oph);
            REQUIRE(ty.shape() == xs);

            CHECK(dot(cx.values(), y.values()) ==
                  Catch::Approx(dot(x.values(), ty.values())).epsilon(1e-10));
        }
    }
}

TEST_CASE("swish values and derivative at zero") {
    Tensor x = Tensor::variable(Shape{1, 1, 1, 3}, {0.0, 20.0, -1.0});
    Tensor y = swish(x);
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == Catch::Approx(20.0).margin(1e-7));
    CHECK(y.values()[2] == Catch::Approx(-1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));

    backward(sum(y));
    // d swish/dx at 0 = sigma(0) = 0.5
    CHECK(x.grad()[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("finite-difference gradients: conv2d") {
    Rng rng(4, Stream::ParamInit, 0);
    std::vector<Tensor> inputs = {
        Tensor::variable(Shape{1, 2, 5, 5}, gradcheck::random_values(50, rng)),
        Tensor::variable(Shape{3, 2, 3, 3}, gradcheck::random_values(54, rng)),
        Tensor::variable(Shape{1, 1, 1, 3}, gradcheck::random_values(3, rng)),
    };
    auto loss = [&] { return sum_squares(conv2d(inputs[0], inputs[1], inputs[2], 2, 1)); };
    const auto res = gradcheck::check(inputs, loss);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("finite-difference gradients: transposed conv") {
    Rng rng(5, Stream::ParamInit, 0);
    std::vector<Tensor> inputs = {
        Tensor::variable(Shape{2, 3, 4, 4}, gradcheck::random_values(96, rng)),
        Tensor::variable(Shape{3, 2, 3, 3}, gradcheck::random_values(54, rng)),
        Tensor::variable(Shape{1, 1, 1, 2}, gradcheck::random_values(2, rng)),
    };
    auto loss = [&] {
        return sum_squares(conv2d_transposed(inputs[0], inputs[1], inputs[2], 2, 1, 1));
    };
    const auto res = gradcheck::check(inputs, loss);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("finite-difference gradients: mixed elementwise graph") {
    Rng rng(6, Stream::ParamInit, 0);
    std::vector<Tensor> inputs = {
        Tensor::variable(Shape{2, 4, 8, 8}, gradcheck::random_values(512, rng)),
        Tensor::variable(Shape{2, 4, 8, 8}, gradcheck::random_values(512, rng)),
    };
    Tensor mask = Tensor::constant(Shape{1, 1, 8, 8}, gradcheck::random_values(64, rng));
    auto loss = [&] {
        Tensor d = sub(swish(inputs[0]), scale(inputs[1], 0.7));
        Tensor s = mul(add(shift2d(d, 1, 0), shift2d(d, 0, -1)), mask);
        return sum_squares(add_scalar(s, 0.1));
    };
    // the loss here is O(10^3), so the finite-difference noise floor is
    // ~1e-8 absolute; keep the relative check meaningful for tiny gradients
    const auto res = gradcheck::check(inputs, loss, 1e-5, /*floor=*/5e-3);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("backward on a linear map fills the exact gradient") {
    Tensor x = Tensor::constant(Shape{1, 1, 1, 4}, {1.0, -2.0, 3.0, 0.5});
    Tensor w = Tensor::variable(Shape{1, 1, 1, 4}, {0.0, 0.0, 0.0, 0.0});
    backward(sum(mul(w, x)));
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == x.values()[i]);
}

TEST_CASE("backward of mse(a, a) is zero") {
    Rng rng(7, Stream::ParamInit, 0);
    Tensor a = Tensor::variable(Shape{1, 1, 3, 3}, gradcheck::random_values(9, rng));
    backward(sum_squares(sub(a, a)));
    for (double g : a.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward requires a scalar loss and accumulates additively") {
    Tensor x = Tensor::variable(Shape{1, 1, 1, 2}, {3.0, 4.0});
    CHECK_THROWS_AS(backward(x), ShapeError);

    Tensor l1 = sum_squares(x);
    backward(l1);
    const double g0 = x.grad()[0];
    backward(l1);
    CHECK(x.grad()[0] == 2.0 * g0); // repeated sweeps add up

    x.zero_grad();
    backward(sum_squares(x));
    CHECK(x.grad()[0] == g0);
}

TEST_CASE("backward twice from identical inputs is bitwise identical") {
    Rng rng(8, Stream::ParamInit, 0);
    const auto vals = gradcheck::random_values(50, rng);
    const auto w = gradcheck::random_values(36, rng);
    std::vector<double> g1, g2;
    for (int rep = 0; rep < 2; ++rep) {
        Tensor x = Tensor::variable(Shape{1, 2, 5, 5}, vals);
        Tensor k = Tensor::variable(Shape{2, 2, 3, 3}, w);
        Tensor b = Tensor::variable(Shape{1, 1, 1, 2}, {0.1, -0.2});
        backward(sum_squares(swish(conv2d(x, k, b, 1, 1))));
        (rep == 0 ? g1 : g2) = k.grad();
    }
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params = {Tensor::variable(Shape{1, 1, 1, 3}, {1.0, 2.0, 3.0})};
    AdamState st;
    st.reset(params);
    params[0].grad_buffer(); // allocate zero gradient
    adam_step(params, st);
    CHECK(st.step == 1);
    CHECK(params[0].values()[0] == 1.0);
    CHECK(params[0].values()[1] == 2.0);
    CHECK(params[0].values()[2] == 3.0);
}

TEST_CASE("adam: first step moves by about lr in the gradient direction") {
    std::vector<Tensor> params = {Tensor::variable(Shape{1, 1, 1, 2}, {0.0, 0.0})};
    AdamState st;
    st.lr = 1e-3;
    st.reset(params);
    auto& g = params[0].grad_buffer();
    g[0] = 5.0;
    g[1] = -0.25;
    adam_step(params, st);
    CHECK(params[0].values()[0] == Catch::Approx(-1e-3).epsilon(0.01));
    CHECK(params[0].values()[1] == Catch::Approx(1e-3).epsilon(0.01));
    // gradients cleared afterwards
    CHECK(params[0].grad()[0] == 0.0);
}

TEST_CASE("adam: missing gradient is a state error") {
    std::vector<Tensor> params = {Tensor::variable(Shape{1, 1, 1, 1}, {0.0})};
    AdamState st;
    st.reset(params);
    CHECK_THROWS_AS(adam_step(params, st), std::logic_error);
}

TEST_CASE("adam: 200 steps on (w-3)^2 converge near 3") {
    std::vector<Tensor> params = {Tensor::variable(Shape{1, 1, 1, 1}, {0.0})};
    AdamState st;
    st.lr = 0.05;
    st.reset(params);
    for (int i = 0; i < 200; ++i) {
        Tensor diff = add_scalar(params[0], -3.0);
        backward(sum_squares(diff));
        adam_step(params, st);
    }
    CHECK(std::abs(params[0].values()[0] - 3.0) < 0.5);
}
