#include "dfm/funcspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

namespace {

std::vector<double> merged_breaks(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

Interval::Interval(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
        std::ostringstream os;
        os << "interval requires finite lo < hi, got [" << lo << ", " << hi << "]";
        throw DomainError(os.str());
    }
}

Partition::Partition(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw ShapeError("partition needs at least two points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
        if (!std::isfinite(points_[i])) throw DomainError("partition point is not finite");
        if (i > 0 && !(points_[i - 1] < points_[i]))
            throw DomainError("partition points must be strictly increasing");
    }
}

Partition Partition::uniform(const Interval& iv, std::size_t count) {
    if (count < 2) throw ShapeError("uniform partition needs at least two points");
    std::vector<double> pts(count);
    const double n = static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i)
        pts[i] = iv.lo() + iv.length() * (static_cast<double>(i) / n);
    pts.back() = iv.hi();
    return Partition(std::move(pts));
}

PiecewiseLinear::PiecewiseLinear(std::vector<double> breaks, std::vector<double> values)
    : breaks_(std::move(breaks)), values_(std::move(values)) {
    if (breaks_.size() != values_.size())
        throw ShapeError("piecewise-linear breaks and values differ in length");
    if (breaks_.size() < 2) throw ShapeError("piecewise-linear function needs two breakpoints");
    for (std::size_t i = 1; i < breaks_.size(); ++i)
        if (!(breaks_[i - 1] < breaks_[i]))
            throw DomainError("piecewise-linear breakpoints must be strictly increasing");
}

double PiecewiseLinear::operator()(double u) const {
    if (u < breaks_.front() || u > breaks_.back()) {
        std::ostringstream os;
        os << "evaluation point " << u << " outside [" << breaks_.front() << ", "
           << breaks_.back() << "]";
        throw DomainError(os.str());
    }
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), u);
    std::size_t i = (it == breaks_.begin()) ? 0 : static_cast<std::size_t>(it - breaks_.begin()) - 1;
    if (breaks_[i] == u) return values_[i];
    if (i + 1 >= breaks_.size()) return values_.back();
    const double t = (u - breaks_[i]) / (breaks_[i + 1] - breaks_[i]);
    return values_[i] + t * (values_[i + 1] - values_[i]);
}

GridFunction::GridFunction(Interval domain, std::vector<double> values)
    : domain_(domain), values_(std::move(values)) {
    if (values_.size() < 2) throw ShapeError("grid function needs at least two samples");
    for (double v : values_)
        if (!std::isfinite(v)) throw NumericError("grid function sample is not finite");
}

GridFunction GridFunction::sample(const Interval& domain, std::size_t count, const RealFn& f) {
    if (count < 2) throw ShapeError("grid function needs at least two samples");
    std::vector<double> vals(count);
    const double n = static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = i + 1 == count ? domain.hi()
                                        : domain.lo() + domain.length() * (static_cast<double>(i) / n);
        vals[i] = f(u);
    }
    return {domain, std::move(vals)};
}

GridFunction GridFunction::constant(const Interval& domain, std::size_t count, double value) {
    if (count < 2) throw ShapeError("grid function needs at least two samples");
    return {domain, std::vector<double>(count, value)};
}

double GridFunction::node(std::size_t i) const {
    if (i + 1 == values_.size()) return domain_.hi();
    const double n = static_cast<double>(values_.size() - 1);
    return domain_.lo() + domain_.length() * (static_cast<double>(i) / n);
}

std::vector<double> GridFunction::nodes() const {
    std::vector<double> out(values_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(i);
    return out;
}

double GridFunction::eval(double u) const {
    if (!domain_.contains(u)) {
        std::ostringstream os;
        os << "evaluation point " << u << " outside [" << domain_.lo() << ", " << domain_.hi()
           << "]";
        throw DomainError(os.str());
    }
    const std::size_t last = values_.size() - 1;
    const double s = (u - domain_.lo()) / domain_.length() * static_cast<double>(last);
    const auto nearest = static_cast<std::size_t>(std::clamp(std::llround(s), 0LL,
                                                             static_cast<long long>(last)));
    if (node(nearest) == u) return values_[nearest];
    auto i = static_cast<std::size_t>(std::floor(s));
    if (i >= last) i = last - 1;
    const double x0 = node(i);
    const double x1 = node(i + 1);
    const double t = std::clamp((u - x0) / (x1 - x0), 0.0, 1.0);
    return values_[i] + t * (values_[i + 1] - values_[i]);
}

GridFunction GridFunction::resample(std::size_t count) const {
    if (count == values_.size()) return *this;
    return sample(domain_, count, [this](double u) { return eval(u); });
}

PiecewiseLinear GridFunction::to_piecewise() const { return {nodes(), values_}; }

QuadratureRule QuadratureRule::simpson(const Interval& iv, std::size_t panels) {
    const std::vector<double> breaks{iv.lo(), iv.hi()};
    return simpson_piecewise(breaks, panels);
}

QuadratureRule QuadratureRule::simpson_piecewise(std::span<const double> breaks,
                                                 std::size_t panels_per_segment) {
    if (panels_per_segment < 1) throw ShapeError("quadrature needs at least one panel");
    if (breaks.size() < 2) throw ShapeError("quadrature needs at least two breakpoints");
    QuadratureRule rule;
    const std::size_t total = (breaks.size() - 1) * panels_per_segment;
    rule.nodes.reserve(2 * total + 1);
    rule.weights.reserve(2 * total + 1);
    rule.nodes.push_back(breaks.front());
    rule.weights.push_back(0.0);
    const auto pps = static_cast<double>(panels_per_segment);
    for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
        const double a = breaks[s];
        const double len = breaks[s + 1] - a;
        const double h = len / pps;
        for (std::size_t k = 0; k < panels_per_segment; ++k) {
            const double x0 = a + len * (static_cast<double>(k) / pps);
            const double x2 = k + 1 == panels_per_segment
                                  ? breaks[s + 1]
                                  : a + len * (static_cast<double>(k + 1) / pps);
            rule.weights.back() += h / 6.0;
            rule.nodes.push_back(0.5 * (x0 + x2));
            rule.weights.push_back(4.0 * h / 6.0);
            rule.nodes.push_back(x2);
            rule.weights.push_back(h / 6.0);
        }
    }
    return rule;
}

double QuadratureRule::integrate(const RealFn& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const double y = f(nodes[i]);
        if (!std::isfinite(y)) {
            std::ostringstream os;
            os << "non-finite integrand value at u = " << nodes[i];
            throw NumericError(os.str());
        }
        acc += weights[i] * y;
    }
    return acc;
}

double quadrature(const RealFn& f, const Interval& iv, std::size_t panels) {
    return QuadratureRule::simpson(iv, panels).integrate(f);
}

double l2_distance(const GridFunction& f, const GridFunction& g) {
    if (!(f.domain() == g.domain())) throw ShapeError("l2_distance: domains differ");
    const auto breaks = merged_breaks(f.nodes(), g.nodes());
    const auto rule = QuadratureRule::simpson_piecewise(breaks, kDefaultPanelsPerSegment);
    const auto pf = f.to_piecewise();
    const auto pg = g.to_piecewise();
    const double sq = rule.integrate([&](double u) {
        const double d = pf(u) - pg(u);
        return d * d;
    });
    return std::sqrt(std::max(sq, 0.0));
}

double l1_distance(const PiecewiseLinear& f, const PiecewiseLinear& g) {
    if (f.breaks().front() != g.breaks().front() || f.breaks().back() != g.breaks().back())
        throw ShapeError("l1_distance: domains differ");
    const auto breaks = merged_breaks(f.breaks(), g.breaks());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double h = breaks[i + 1] - breaks[i];
        const double d0 = f(breaks[i]) - g(breaks[i]);
        const double d1 = f(breaks[i + 1]) - g(breaks[i + 1]);
        if ((d0 >= 0.0) == (d1 >= 0.0) || d0 == 0.0 || d1 == 0.0) {
            acc += 0.5 * h * std::abs(d0 + d1);
        } else {
            // The difference changes sign inside the segment: two triangles.
            acc += 0.5 * h * (d0 * d0 + d1 * d1) / (std::abs(d0) + std::abs(d1));
        }
    }
    return acc;
}

std::vector<double> rho_project(const RealFn& f, const Partition& p) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = f(p.points()[i]);
    return out;
}

PiecewiseLinear rho_star(std::span<const double> v, const Partition& p) {
    if (v.size() != p.size()) throw ShapeError("rho_star: vector length differs from partition size");
    return {p.points(), std::vector<double>(v.begin(), v.end())};
}

}  // namespace dfm
