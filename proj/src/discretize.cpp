#include "dfm/discretize.hpp"

#include <cmath>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

namespace {

SegmentMoments segment_moments(const Kernel& k, double n, double v) {
    if (const auto* p = std::get_if<PolyKernel>(&k)) return poly_segment_moments(*p, n, v);
    if (const auto* w = std::get_if<WaveKernel>(&k)) return wave_segment_moments(*w, n, v);
    throw CapabilityError("integrate mode needs closed-form segment moments (poly or wave kernel)");
}

}  // namespace

DiscretizationSpec::DiscretizationSpec(std::size_t n, std::vector<double> outs, DiscretizationMode m)
    : in_samples(n), out_indices(std::move(outs)), mode(m) {
    if (in_samples < 2) throw ShapeError("discretization needs at least two input samples");
    if (out_indices.empty()) throw ShapeError("discretization needs at least one output index");
}

DiscretizationSpec DiscretizationSpec::with_outputs(std::size_t n, std::size_t m, DiscretizationMode mode) {
    std::vector<double> outs(m);
    for (std::size_t j = 0; j < m; ++j) outs[j] = static_cast<double>(j + 1);
    return {n, std::move(outs), mode};
}

NDiscrete integrate_instantiate(const Kernel& k, const DiscretizationSpec& spec) {
    const std::size_t n = spec.in_samples;
    const std::size_t m = spec.out_indices.size();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
        const double v = spec.out_indices[j];
        const auto col = static_cast<Eigen::Index>(j);
        // Segment s (0-based) covers abscissae [s + 1, s + 2].
        SegmentMoments prev{};
        for (std::size_t s = 0; s + 1 < n; ++s) {
            const auto mom = segment_moments(k, static_cast<double>(s + 1), v);
            const auto row = static_cast<Eigen::Index>(s);
            w(row, col) = mom.q - mom.v + (s > 0 ? prev.v : 0.0);
            prev = mom;
        }
        w(static_cast<Eigen::Index>(n - 1), col) = prev.v;
    }
    return {std::move(w), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m))};
}

NDiscrete sample_instantiate(const Kernel& k, std::size_t in_shape, std::size_t out_shape) {
    if (in_shape < 1 || out_shape < 1) throw ShapeError("sample_instantiate needs positive shapes");
    Eigen::MatrixXd w(static_cast<Eigen::Index>(in_shape), static_cast<Eigen::Index>(out_shape));
    const auto ni = static_cast<double>(in_shape);
    const auto no = static_cast<double>(out_shape);
    for (std::size_t i = 0; i < in_shape; ++i)
        for (std::size_t j = 0; j < out_shape; ++j)
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                eval_kernel(k, static_cast<double>(i + 1) / ni, static_cast<double>(j + 1) / no);
    return {std::move(w), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out_shape))};
}

NDiscrete instantiate(const Kernel& k, const DiscretizationSpec& spec) {
    if (spec.mode == DiscretizationMode::Integrate) return integrate_instantiate(k, spec);
    return sample_instantiate(k, spec.in_samples, spec.out_indices.size());
}

Eigen::MatrixXd sample_instantiate_2d(const WaveKernel& k, std::size_t in_side, std::size_t out_side) {
    if (k.dim() != 2) throw ShapeError("2-D instantiation needs a 2-D wave kernel");
    if (in_side < 1 || out_side < 1) throw ShapeError("2-D instantiation needs positive sides");
    const auto ni = static_cast<double>(in_side);
    const auto no = static_cast<double>(out_side);
    Eigen::MatrixXd w(static_cast<Eigen::Index>(in_side * in_side), static_cast<Eigen::Index>(out_side * out_side));
    double point[4];
    for (std::size_t i1 = 0; i1 < in_side; ++i1)
        for (std::size_t i2 = 0; i2 < in_side; ++i2) {
            point[0] = static_cast<double>(i1 + 1) / ni;
            point[1] = static_cast<double>(i2 + 1) / ni;
            const auto row = static_cast<Eigen::Index>(i1 * in_side + i2);
            for (std::size_t j1 = 0; j1 < out_side; ++j1)
                for (std::size_t j2 = 0; j2 < out_side; ++j2) {
                    point[2] = static_cast<double>(j1 + 1) / no;
                    point[3] = static_cast<double>(j2 + 1) / no;
                    w(row, static_cast<Eigen::Index>(j1 * out_side + j2)) = k.eval_point(point);
                }
        }
    return w;
}

std::vector<double> apply_wave_layer_2d(const WaveKernel& k, std::span<const double> image, std::size_t in_side,
                                        std::size_t out_side) {
    if (image.size() != in_side * in_side) throw ShapeError("image size does not match in_side^2");
    const auto w = sample_instantiate_2d(k, in_side, out_side);
    const Eigen::Map<const Eigen::VectorXd> x(image.data(), static_cast<Eigen::Index>(image.size()));
    const Eigen::VectorXd y = (w.transpose() * x) / static_cast<double>(image.size());
    return {y.data(), y.data() + y.size()};
}

ConvEquivalence conv_equivalence(std::span<const double> h, std::size_t n) {
    if (h.empty()) throw ShapeError("convolution filter must not be empty");
    if (h.size() % 2 == 0) throw CapabilityError("conv_equivalence needs an odd-length (centered) filter");
    if (n < h.size()) throw ShapeError("signal length must be at least the filter length");
    auto kernel = conv_profile_kernel(h, 1.0);
    const auto r = static_cast<double>((h.size() - 1) / 2);
    const auto dim = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd w(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j < dim; ++j)
            w(i, j) = kernel.profile(static_cast<double>(i - j) + r);
    return {std::move(kernel), std::move(w)};
}

PointApproxKernel::PointApproxKernel(const GridFunction& xi, const GridFunction& target, Activation g)
    : xi_(xi), target_(target), g_(g), cumulative_(xi.size(), 0.0), total_(0.0) {
    const auto& y = xi_.values();
    for (std::size_t i = 1; i < y.size(); ++i)
        cumulative_[i] = cumulative_[i - 1] + 0.5 * (xi_.node(i) - xi_.node(i - 1)) * (y[i - 1] + y[i]);
    total_ = cumulative_.back();
    if (!(std::abs(total_) > 1e-9))
        throw SingularInputError("point approximation needs an input with nonzero integral");
    for (double fv : target_.values())
        if (!g_.in_codomain(fv)) {
            std::ostringstream os;
            os << "target value " << fv << " is outside the codomain of " << g_.tag();
            throw RangeError(os.str());
        }
}

double PointApproxKernel::running_integral(double u) const {
    const auto& dom = xi_.domain();
    if (!dom.contains(u)) throw DomainError("running integral evaluated outside the input domain");
    const std::size_t last = xi_.size() - 1;
    auto i = static_cast<std::size_t>(std::floor((u - dom.lo()) / dom.length() * static_cast<double>(last)));
    if (i >= last) i = last - 1;
    const double x0 = xi_.node(i);
    return cumulative_[i] + 0.5 * (u - x0) * (xi_.values()[i] + xi_.eval(u));
}

double PointApproxKernel::operator()(double u, double v) const {
    const double pre = g_.inverse(target_.eval(v));
    const double x = running_integral(u);
    const double ratio = x / total_;  // (x - Xi(a)) / (Xi(b) - Xi(a)) with Xi(a) = 0
    const double h = g_.g(pre * ratio);
    const double dh_dx = g_.derivative(pre * ratio) * pre / total_;
    return g_.inverse_derivative(h) * dh_dx;
}

PointApproxKernel point_approx_kernel(const GridFunction& xi, const GridFunction& target, Activation g) {
    return {xi, target, g};
}

double apply_point_kernel(const PointApproxKernel& k, double v, std::size_t panels) {
    const auto& xi = k.input();
    const std::size_t segments = xi.size() - 1;
    const std::size_t per = std::max<std::size_t>(1, (panels + segments - 1) / segments);
    const auto breaks = xi.nodes();
    const auto rule = QuadratureRule::simpson_piecewise(breaks, per);
    return rule.integrate([&](double u) { return xi.eval(u) * k(u, v); });
}

}  // namespace dfm
