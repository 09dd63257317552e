#include <doctest.h>

#include <cmath>

#include "dfm/error.hpp"
#include "dfm/onn.hpp"

#include <Eigen/Dense>
#include "oracle.hpp"

using namespace dfm;

namespace {

const Interval kUnit(0.0, 1.0);

PolyONN single(double c, Activation g = {}) {
    return PolyONN({OnnLayer{PolyKernel::constant(c), kUnit}}, g, kUnit);
}

GridFunction random_grid(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(rng, lo, hi);
    return GridFunction(kUnit, v);
}

PolyONN random_model(Rng& rng, std::size_t depth, Activation g) {
    std::vector<std::pair<std::size_t, std::size_t>> degrees;
    for (std::size_t l = 0; l < depth; ++l) degrees.emplace_back(1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4));
    return random_poly_onn(degrees, g, 1.0, rng);
}

// Max relative error of backward against a five-point difference.
double gradient_check(PolyONN m, const GridFunction& gamma, const GridFunction& delta) {
    const auto fwd = forward(m, gamma);
    const auto grads = backward(m, fwd.tape, gamma, delta);
    double worst = 0.0;
    for (std::size_t l = 0; l < m.depth(); ++l) {
        const std::size_t count = m.layers()[l].kernel.coeffs().size();
        for (std::size_t i = 0; i < count; ++i) {
            const double orig = m.layers()[l].kernel.coeffs()[i];
            auto f = [&](double x) {
                m.mutable_kernel(l).coeffs()[i] = x;
                const double e = loss(m, gamma, delta);
                m.mutable_kernel(l).coeffs()[i] = orig;
                return e;
            };
            const double fd = oracle::five_point_difference(f, orig, 1e-3);
            worst = std::max(worst, oracle::rel_err(grads.layers[l].coeffs()[i], fd, 1e-5));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("forward examples") {
    auto one = GridFunction::constant(kUnit, 5, 1.0);
    auto out = forward(single(0.7), one).output;
    for (double y : out.values()) CHECK(y == doctest::Approx(0.7).epsilon(1e-14));

    Rng rng(1);
    for (auto g : {ActivationKind::Identity, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
        auto m = random_model(rng, 3, Activation(g));
        auto z = forward(m, GridFunction::constant(kUnit, 7, 0.0)).output;
        // Only the first layer sees a zero input; deeper layers see g(0).
        if (g == ActivationKind::Identity) {
            for (double y : z.values()) CHECK(y == 0.0);
        }
    }
    auto zero_in = forward(random_poly_onn({{3, 3}}, Activation(ActivationKind::Sigmoid), 1.0, rng),
                           GridFunction::constant(kUnit, 7, 0.0)).output;
    for (double y : zero_in.values()) CHECK(y == 0.5);

    PolyKernel k(2, 2);
    k.coeff(1, 1) = 1.0;
    PolyONN m({OnnLayer{k, kUnit}}, {}, kUnit);
    auto y = forward(m, GridFunction::sample(kUnit, 2, [](double u) { return u; })).output;
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y.values()[i] - y.node(i) / 3.0) <= 1e-9);
    CHECK_THROWS_AS(forward(m, GridFunction::constant({0, 2}, 3, 1.0)), ShapeError);
}

TEST_CASE("sigmoid overflow is a numeric error") {
    auto m = single(800.0, Activation(ActivationKind::Sigmoid));
    CHECK_THROWS_AS(forward(m, GridFunction::constant(kUnit, 3, 1.0)), NumericError);
}

TEST_CASE("piecewise-linear moments are exact") {
    Rng rng(2);
    for (int t = 0; t < 30; ++t) {
        const Interval iv(uniform(rng, -1, 0), uniform(rng, 0.5, 2));
        std::vector<double> v(2 + uniform_index(rng, 20));
        for (auto& x : v) x = uniform(rng, -1, 1);
        GridFunction f(iv, v);
        const auto m = piecewise_linear_moments(f, 6);
        const auto nodes = f.nodes();
        for (std::size_t a = 0; a < 6; ++a) {
            const double ref = oracle::gauss_piecewise([&](double u) { return f(u) * std::pow(u, a); }, nodes);
            REQUIRE(std::abs(m[a] - ref) <= 1e-13);
        }
    }
}

TEST_CASE("loss examples") {
    auto target = GridFunction::constant(kUnit, 5, 0.3);
    CHECK(loss(single(0.3), GridFunction::constant(kUnit, 3, 1.0), target) == doctest::Approx(0.0));
    CHECK(loss(single(1.3), GridFunction::constant(kUnit, 3, 1.0), target) == doctest::Approx(0.5).epsilon(1e-14));
    // output 0, delta = -v
    auto neg_v = GridFunction::sample(kUnit, 2, [](double v) { return -v; });
    CHECK(std::abs(loss(single(0.0), GridFunction::constant(kUnit, 3, 1.0), neg_v) - 1.0 / 6.0) <= 1e-10);
    CHECK_THROWS_AS(loss(single(0.0), GridFunction::constant(kUnit, 3, 1.0), GridFunction::constant({0, 2}, 3, 0)),
                    ShapeError);
}

TEST_CASE("psi examples") {
    auto one = GridFunction::constant(kUnit, 3, 1.0);
    auto id = single(0.4);
    CHECK(psi(id, forward(id, one).tape, 1, 0.3) == 1.0);
    auto th = single(0.0, Activation(ActivationKind::Tanh));
    CHECK(psi(th, forward(th, one).tape, 1, 0.8) == 1.0);
    auto sg = single(0.0, Activation(ActivationKind::Sigmoid));
    CHECK(psi(sg, forward(sg, one).tape, 1, 0.8) == 0.25);
    CHECK_THROWS_AS(psi(sg, forward(sg, one).tape, 0, 0.8), IndexError);
}

TEST_CASE("backward hand example and sgd step") {
    const double c = 0.8;
    auto m = single(c);
    auto gamma = GridFunction::constant(kUnit, 3, 1.0);
    auto delta = GridFunction::constant(kUnit, 3, 0.0);
    auto fwd = forward(m, gamma);
    CHECK(loss_from_tape(m, fwd.tape, delta) == doctest::Approx(0.5 * c * c).epsilon(1e-14));
    auto g = backward(m, fwd.tape, gamma, delta);
    CHECK(g.layers[0].coeff(0, 0) == doctest::Approx(c).epsilon(1e-14));
    const auto v0 = m.version();
    CHECK(sgd_step(m, g, 1.0) == v0 + 1);
    CHECK(std::abs(m.layers()[0].kernel.coeff(0, 0)) < 1e-14);
    CHECK(loss(m, gamma, delta) < 1e-28);
}

TEST_CASE("zero residual gives zero gradients") {
    Rng rng(4);
    auto gamma = random_grid(rng, 9);
    auto c = single(0.25, Activation(ActivationKind::Tanh));
    auto target = GridFunction::constant(kUnit, 4, std::tanh(0.25 * piecewise_linear_moments(gamma, 1)[0]));
    auto g = backward(c, forward(c, gamma).tape, gamma, target);
    CHECK(std::abs(g.layers[0].coeff(0, 0)) < 1e-15);
}

TEST_CASE("sgd_step identities") {
    Rng rng(5);
    auto m = random_model(rng, 2, Activation(ActivationKind::Tanh));
    const auto before = onn_to_json(m).at("layers").dump();
    sgd_step(m, zero_gradients(m), 0.7);
    CHECK(onn_to_json(m).at("layers").dump() == before);
    auto gamma = random_grid(rng, 9), delta = random_grid(rng, 9);
    auto fwd = forward(m, gamma);
    sgd_step(m, backward(m, fwd.tape, gamma, delta), 0.0);
    CHECK(onn_to_json(m).at("layers").dump() == before);
    CHECK_THROWS_AS(sgd_step(m, zero_gradients(single(1)), 0.1), ShapeError);
    CHECK_THROWS_AS(sgd_step(m, zero_gradients(m), -1.0), DomainError);
}

TEST_CASE("stale tapes are rejected") {
    Rng rng(6);
    auto m = random_model(rng, 2, Activation(ActivationKind::Tanh));
    auto gamma = random_grid(rng, 9), delta = random_grid(rng, 9);
    auto fwd = forward(m, gamma);
    auto copy = m;
    CHECK_NOTHROW(backward(copy, fwd.tape, gamma, delta));
    m.mutable_kernel(0).coeffs()[0] += 0.1;
    CHECK_THROWS_AS(backward(m, fwd.tape, gamma, delta), ConsistencyError);
    CHECK_THROWS_AS(loss_from_tape(m, fwd.tape, delta), ConsistencyError);
    auto fresh = forward(m, gamma);
    CHECK_THROWS_AS(backward(m, fresh.tape, random_grid(rng, 9), delta), ConsistencyError);
    sgd_step(copy, zero_gradients(copy), 0.1);
    CHECK_THROWS_AS(backward(copy, fwd.tape, gamma, delta), ConsistencyError);
}

TEST_CASE("gradients match central differences") {
    Rng rng(7);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const auto g = Activation(t % 2 ? ActivationKind::Tanh : ActivationKind::Sigmoid);
        auto m = random_model(rng, 1 + static_cast<std::size_t>(t % 3), g);
        worst = std::max(worst, gradient_check(m, random_grid(rng, 2 + uniform_index(rng, 30)),
                                               random_grid(rng, 2 + uniform_index(rng, 30))));
    }
    MESSAGE("max relative error " << worst);
    CHECK(worst <= 1e-5);
}

TEST_CASE("identity activation output is a polynomial of degree < Z_Y") {
    Rng rng(8);
    for (int t = 0; t < 10; ++t) {
        PolyKernel k(3, 4);
        for (auto& c : k.coeffs()) c = uniform(rng, -1, 1);
        PolyONN m({OnnLayer{k, kUnit}}, {}, kUnit);
        auto y = forward(m, random_grid(rng, 11)).output;
        const auto n = static_cast<Eigen::Index>(y.size());
        Eigen::MatrixXd basis(n, 4);
        Eigen::VectorXd rhs(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = y.node(static_cast<std::size_t>(i));
            for (Eigen::Index b = 0; b < 4; ++b) basis(i, b) = std::pow(v, static_cast<double>(b));
            rhs[i] = y.values()[static_cast<std::size_t>(i)];
        }
        const Eigen::VectorXd fit = basis.colPivHouseholderQr().solve(rhs);
        REQUIRE((basis * fit - rhs).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("small sgd steps do not increase the loss") {
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        auto m = random_model(rng, 2, Activation(ActivationKind::Tanh));
        auto gamma = random_grid(rng, 9), delta = random_grid(rng, 9);
        auto fwd = forward(m, gamma);
        const double e0 = loss_from_tape(m, fwd.tape, delta);
        const auto g = backward(m, fwd.tape, gamma, delta);
        bool ok = false;
        for (double alpha = 1e-2; alpha > 1e-8; alpha *= 0.5) {
            auto trial = m;
            sgd_step(trial, g, alpha);
            if (loss(trial, gamma, delta) <= e0) {
                ok = true;
                break;
            }
        }
        REQUIRE(ok);
    }
}

TEST_CASE("cached and uncached forward are bit identical") {
    Rng rng(10);
    for (int t = 0; t < 10; ++t) {
        auto m = random_model(rng, 3, Activation(t % 2 ? ActivationKind::Tanh : ActivationKind::Sigmoid));
        auto x = random_grid(rng, 17);
        auto a = forward(m, x, {true});
        auto b = forward(m, x, {false});
        REQUIRE(a.output.values() == b.output.values());
        REQUIRE(a.tape.coefficients == b.tape.coefficients);
    }
}

TEST_CASE("tape coefficients are reproducible from moments") {
    Rng rng(11);
    auto m = random_model(rng, 3, Activation(ActivationKind::Tanh));
    auto tape = forward(m, random_grid(rng, 9)).tape;
    for (std::size_t l = 0; l < m.depth(); ++l) {
        const auto& k = m.layers()[l].kernel;
        for (std::size_t s = 0; s < k.zy(); ++s) {
            double c = 0.0;
            for (std::size_t a = 0; a < k.zx(); ++a) c += k.coeff(a, s) * tape.moments[l][a];
            CHECK(std::abs(c - tape.coefficients[l][s]) <= 1e-12);
        }
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(12);
    auto m = random_model(rng, 2, Activation(ActivationKind::Sigmoid));
    sgd_step(m, zero_gradients(m), 0.1);
    const auto j = onn_to_json(m);
    const auto back = onn_from_json(nlohmann::json::parse(j.dump()));
    CHECK(onn_to_json(back).dump() == j.dump());
    CHECK(back.version() == 1);
    auto x = random_grid(rng, 9);
    CHECK(forward(back, x).output.values() == forward(m, x).output.values());
}
