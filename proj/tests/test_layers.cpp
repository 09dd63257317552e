#include <doctest.h>

#include <cmath>

#include "dfm/activation.hpp"
#include "dfm/error.hpp"
#include "dfm/layers.hpp"
#include "dfm/random.hpp"
#include "oracle.hpp"

using namespace dfm;

namespace {

const Interval kUnit(0.0, 1.0);

Eigen::VectorXd vec(std::initializer_list<double> xs) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

}  // namespace

TEST_CASE("activation derivative matches central differences") {
    for (auto kind : {ActivationKind::Identity, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
        Activation g(kind);
        for (double x = -4.0; x <= 4.0; x += 0.125) {
            const double fd = oracle::central_difference([&](double t) { return g.g(t); }, x, 1e-5);
            REQUIRE(std::abs(g.derivative(x) - fd) <= 1e-6);
        }
    }
}

TEST_CASE("activation inverse round trip") {
    Activation tanh_g(ActivationKind::Tanh), sig(ActivationKind::Sigmoid), id(ActivationKind::Identity);
    for (double y = -0.99; y < 1.0; y += 0.03) REQUIRE(std::abs(tanh_g.g(tanh_g.inverse(y)) - y) <= 1e-10);
    for (double y = 0.01; y < 1.0; y += 0.03) REQUIRE(std::abs(sig.g(sig.inverse(y)) - y) <= 1e-10);
    for (double y = -50; y < 50; y += 3.7) REQUIRE(std::abs(id.g(id.inverse(y)) - y) <= 1e-10);
    CHECK_THROWS_AS(tanh_g.inverse(1.0), RangeError);
    CHECK_THROWS_AS(sig.inverse(0.0), RangeError);
    for (double y : {-0.5, 0.2, 0.7}) {
        const double fd = oracle::central_difference([&](double t) { return tanh_g.inverse(t); }, y, 1e-6);
        CHECK(std::abs(tanh_g.inverse_derivative(y) - fd) < 1e-7);
    }
}

TEST_CASE("activation parsing and clamping") {
    CHECK(Activation::parse("tanh").kind() == ActivationKind::Tanh);
    CHECK(Activation::parse("sigmoid").tag() == "sigmoid");
    CHECK_THROWS_AS(Activation::parse("relu"), ConfigError);
    CHECK(Activation(ActivationKind::Tanh).g(1e6) == std::tanh(50.0));
    CHECK(Activation(ActivationKind::Sigmoid).g(-1e6) > 0.0);
}

TEST_CASE("apply_n examples") {
    Eigen::VectorXd x = vec({2, 3});
    CHECK(apply_n(NDiscrete(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)), x) == x);
    CHECK(apply_n(NDiscrete(Eigen::MatrixXd::Zero(2, 2), vec({4, 5})), x) == vec({4, 5}));
    Eigen::MatrixXd w(2, 1);
    w << 1, 1;
    CHECK(apply_n(NDiscrete(w, vec({0})), x)[0] == 5.0);
    CHECK_THROWS_AS(apply_n(NDiscrete(w, vec({0})), vec({1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(NDiscrete(w, vec({0, 0})), ShapeError);
}

TEST_CASE("apply_o examples") {
    auto one = GridFunction::constant(kUnit, 5, 1.0);
    auto zero_out = apply_o(OOperational{PolyKernel::constant(0.0), kUnit, kUnit, 7}, one);
    for (double y : zero_out.values()) CHECK(y == 0.0);
    auto const_out = apply_o(OOperational{PolyKernel::constant(1.0), kUnit, kUnit, 7}, one);
    for (double y : const_out.values()) CHECK(y == doctest::Approx(1.0).epsilon(1e-14));
    PolyKernel kv(1, 2, {0.0, 1.0});
    auto v_out = apply_o(OOperational{kv, kUnit, kUnit, 11}, one);
    for (std::size_t i = 0; i < v_out.size(); ++i) CHECK(std::abs(v_out.values()[i] - v_out.node(i)) <= 1e-10);
    CHECK(v_out.size() == 11);
    CHECK_THROWS_AS(apply_o(OOperational{kv, {0, 2}, kUnit, 11}, one), ShapeError);
}

TEST_CASE("apply_o refinement does not hurt on cubic integrands") {
    // x(u) = u piecewise-linear times a quadratic kernel: exact for any panel count.
    auto f = GridFunction::sample(kUnit, 4, [](double u) { return u; });
    PolyKernel k(3, 2, {1, 0.5, -2, 1, 0.3, 0.7});
    const double exact = oracle::gauss([&](double u) { return u * k(u, 0.5); }, 0, 1);
    for (std::size_t p : {1, 2, 8}) {
        auto out = apply_o(OOperational{k, kUnit, kUnit, 3, p}, f);
        CHECK(std::abs(out.values()[1] - exact) < 1e-14);
    }
    // A non-polynomial kernel converges monotonically under refinement.
    WaveKernel w(0.0, {{1.0, {9.0, 1.0}, 0.2}});
    const double ref = oracle::gauss([&](double u) { return f(u) * w(u, 0.5); }, 0, 1, 64);
    double prev = INFINITY;
    for (std::size_t p : {1, 2, 4, 8, 16}) {
        const double err = std::abs(apply_o(OOperational{w, kUnit, kUnit, 3, p}, f).values()[1] - ref);
        CHECK(err <= prev);
        prev = err;
    }
}

TEST_CASE("apply_f examples") {
    auto one = GridFunction::constant(kUnit, 3, 1.0);
    CHECK(apply_f(FFunctional({one}, vec({0})), one)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(apply_f(FFunctional({one, one}, vec({2, -1})), GridFunction::constant(kUnit, 9, 0.0)) == vec({2, -1}));
    auto u = GridFunction::sample(kUnit, 2, [](double x) { return x; });
    CHECK(std::abs(apply_f(FFunctional({u}, vec({0})), one)[0] - 0.5) <= 1e-10);
    CHECK_THROWS_AS(apply_f(FFunctional({u}, vec({0})), GridFunction::constant({0, 3}, 3, 1.0)), ShapeError);
    CHECK_THROWS_AS(FFunctional({u}, vec({0, 1})), ShapeError);
}

TEST_CASE("apply_d examples") {
    auto one = GridFunction::constant(kUnit, 5, 1.0);
    auto v = GridFunction::sample(kUnit, 5, [](double x) { return x; });
    auto zero = apply_d(DDefunctional({one, v}), std::vector<double>{0, 0});
    for (double y : zero.values()) CHECK(y == 0.0);
    auto phi = GridFunction({0, 1}, {0.3, -1, 2, 0.5, 4});
    CHECK(apply_d(DDefunctional({phi}), std::vector<double>{1}).values() == phi.values());
    CHECK(apply_d(DDefunctional({one, v}), std::vector<double>{2, 3}).eval(0.5) == doctest::Approx(3.5).epsilon(1e-15));
    CHECK_THROWS_AS(apply_d(DDefunctional({one, v}), std::vector<double>{2}), ShapeError);
}

TEST_CASE("forward_skeleton examples") {
    Eigen::MatrixXd w(2, 2);
    w << 1, 2, 3, 4;
    {
        Skeleton s;
        auto in = s.add_node("in", FiniteSpace{2});
        auto out = s.add_node("out", FiniteSpace{2});
        s.add_edge(in, out, NDiscrete(w, vec({0.5, -0.5})));
        s.set_input(in);
        s.set_output(out);
        auto y = std::get<Eigen::VectorXd>(forward_skeleton(s, Eigen::VectorXd(vec({1, 1}))));
        CHECK(y == apply_n(NDiscrete(w, vec({0.5, -0.5})), vec({1, 1})));
    }
    {
        Skeleton s;
        auto in = s.add_node("in", FiniteSpace{1});
        auto out = s.add_node("out", FiniteSpace{1}, Activation(ActivationKind::Tanh));
        Eigen::MatrixXd w1(1, 1), w2(1, 1);
        w1 << 0.5;
        w2 << -2.0;
        s.add_edge(in, out, NDiscrete(w1, vec({0.1})));
        s.add_edge(in, out, NDiscrete(w2, vec({0.2})));
        s.set_input(in);
        s.set_output(out);
        auto y = std::get<Eigen::VectorXd>(forward_skeleton(s, Eigen::VectorXd(vec({0.3}))));
        CHECK(y[0] == doctest::Approx(std::tanh(0.5 * 0.3 + 0.1 + -2.0 * 0.3 + 0.2)).epsilon(1e-15));
    }
    {
        Skeleton s;
        Activation sig(ActivationKind::Sigmoid);
        auto in = s.add_node("in", FunctionSpace{kUnit, 9});
        auto mid = s.add_node("mid", FiniteSpace{2}, sig);
        auto out = s.add_node("out", FiniteSpace{1}, sig);
        auto zero = GridFunction::constant(kUnit, 9, 0.0);
        s.add_edge(in, mid, FFunctional({zero, zero}, vec({0.3, -0.4})));
        s.add_edge(mid, out, NDiscrete(Eigen::MatrixXd::Zero(2, 1), vec({0.7})));
        s.set_input(in);
        s.set_output(out);
        auto y = std::get<Eigen::VectorXd>(forward_skeleton(s, GridFunction::sample(kUnit, 9, [](double u) { return u; })));
        CHECK(y[0] == doctest::Approx(sig.g(0.7)).epsilon(1e-15));
    }
}

TEST_CASE("skeleton rejects type errors and cycles") {
    Skeleton s;
    auto a = s.add_node("a", FiniteSpace{2});
    auto b = s.add_node("b", FunctionSpace{kUnit, 5});
    auto c = s.add_node("c", FiniteSpace{2});
    CHECK_THROWS_AS(s.add_node("a", FiniteSpace{1}), ShapeError);
    CHECK_THROWS_AS(s.add_edge(a, c, OOperational{PolyKernel::constant(1), kUnit, kUnit, 5}), ShapeError);
    CHECK_THROWS_AS(s.add_edge(a, b, NDiscrete(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2))), ShapeError);
    CHECK_THROWS_AS(s.add_edge(a, c, NDiscrete(Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(2))), ShapeError);
    s.add_edge(a, c, NDiscrete(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)));
    CHECK_THROWS(s.add_edge(c, a, NDiscrete(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2))));
    CHECK_THROWS(s.add_edge(a, a, NDiscrete(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2))));
}

TEST_CASE("skeleton evaluation is order independent") {
    // diamond: in -> {p, q} -> out, plus a function branch
    Skeleton s;
    Activation t(ActivationKind::Tanh);
    auto in = s.add_node("in", FunctionSpace{kUnit, 17});
    auto p = s.add_node("p", FunctionSpace{kUnit, 9}, t);
    auto q = s.add_node("q", FiniteSpace{3}, t);
    auto r = s.add_node("r", FunctionSpace{kUnit, 13}, t);
    auto out = s.add_node("out", FiniteSpace{2});
    Rng rng(3);
    auto rand_grid = [&](std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = uniform(rng, -1, 1);
        return GridFunction(kUnit, v);
    };
    PolyKernel k(3, 3);
    for (auto& c : k.coeffs()) c = uniform(rng, -1, 1);
    s.add_edge(in, p, OOperational{k, kUnit, kUnit, 9});
    s.add_edge(in, q, FFunctional({rand_grid(5), rand_grid(17), rand_grid(3)}, vec({0.1, 0.2, 0.3})));
    s.add_edge(q, r, DDefunctional({rand_grid(13), rand_grid(7), rand_grid(13)}));
    s.add_edge(p, r, OOperational{WaveKernel(0.1, {{0.5, {2.0, 1.0}, 0.3}}), kUnit, kUnit, 13});
    s.add_edge(r, out, FFunctional({rand_grid(13), rand_grid(9)}, vec({0, 0})));
    s.add_edge(q, out, NDiscrete(Eigen::MatrixXd::Random(3, 2), vec({1, 2})));
    s.set_input(in);
    s.set_output(out);
    const auto x = rand_grid(17);
    const auto y1 = std::get<Eigen::VectorXd>(forward_skeleton(s, x));
    const std::vector<std::size_t> other{in, q, p, r, out};
    CHECK(s.is_topological(other));
    const auto y2 = std::get<Eigen::VectorXd>(forward_skeleton(s, x, other));
    CHECK(y1 == y2);
    const std::vector<std::size_t> bad{in, r, p, q, out};
    CHECK_FALSE(s.is_topological(bad));
    CHECK_THROWS(forward_skeleton(s, x, bad));
}

TEST_CASE("function summands must share a domain") {
    Skeleton s;
    auto in = s.add_node("in", FiniteSpace{1});
    auto f = s.add_node("f", FunctionSpace{kUnit, 5});
    CHECK_THROWS_AS(s.add_edge(in, f, DDefunctional({GridFunction::constant({0, 2}, 5, 1.0)})), ShapeError);
}

TEST_CASE("skeleton JSON round trip") {
    Skeleton s;
    auto in = s.add_node("in", FunctionSpace{kUnit, 9});
    auto h = s.add_node("h", FunctionSpace{kUnit, 5}, Activation(ActivationKind::Tanh));
    auto out = s.add_node("out", FiniteSpace{2}, Activation(ActivationKind::Sigmoid));
    s.add_edge(in, h, OOperational{PolyKernel(2, 2, {0.1, 0.2, -1.0 / 3.0, 0.4}), kUnit, kUnit, 5});
    s.add_edge(h, out,
               FFunctional({GridFunction::constant(kUnit, 3, 0.7), GridFunction::sample(kUnit, 4, [](double u) { return u; })},
                           vec({0.5, 0.25})));
    s.set_input(in);
    s.set_output(out);
    const auto j = skeleton_to_json(s);
    const auto back = skeleton_from_json(nlohmann::json::parse(j.dump()));
    CHECK(skeleton_to_json(back).dump() == j.dump());
    const auto x = GridFunction::sample(kUnit, 9, [](double u) { return std::sin(3 * u); });
    CHECK(std::get<Eigen::VectorXd>(forward_skeleton(s, x)) == std::get<Eigen::VectorXd>(forward_skeleton(back, x)));
}
