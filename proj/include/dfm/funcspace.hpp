#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dfm {

using RealFn = std::function<double(double)>;

// Compact real interval [lo, hi] with lo < hi.
class Interval {
public:
    Interval(double lo, double hi);

    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double length() const { return hi_ - lo_; }
    bool contains(double u) const { return u >= lo_ && u <= hi_; }

    friend bool operator==(const Interval&, const Interval&) = default;

private:
    double lo_;
    double hi_;
};

// Strictly increasing breakpoints p_1 < ... < p_N, N >= 2.
class Partition {
public:
    explicit Partition(std::vector<double> points);

    static Partition uniform(const Interval& iv, std::size_t count);

    const std::vector<double>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    Interval interval() const { return {points_.front(), points_.back()}; }

private:
    std::vector<double> points_;
};

// Piecewise-linear function on arbitrary breakpoints. This is what rho_star
// produces and what non-uniform evaluation goes through.
class PiecewiseLinear {
public:
    PiecewiseLinear(std::vector<double> breaks, std::vector<double> values);

    double operator()(double u) const;

    const std::vector<double>& breaks() const { return breaks_; }
    const std::vector<double>& values() const { return values_; }
    Interval domain() const { return {breaks_.front(), breaks_.back()}; }

private:
    std::vector<double> breaks_;
    std::vector<double> values_;
};

// Uniform samples on an interval, interpreted by joining neighbouring samples
// linearly. Sample i sits at lo + (hi - lo) * i / (N - 1).
class GridFunction {
public:
    GridFunction(Interval domain, std::vector<double> values);

    static GridFunction sample(const Interval& domain, std::size_t count, const RealFn& f);
    static GridFunction constant(const Interval& domain, std::size_t count, double value);

    const Interval& domain() const { return domain_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    double node(std::size_t i) const;
    std::vector<double> nodes() const;
    double spacing() const { return domain_.length() / static_cast<double>(values_.size() - 1); }

    // Linear interpolation; exact at nodes. Throws DomainError outside the domain.
    double eval(double u) const;
    double operator()(double u) const { return eval(u); }

    // Re-sample this function's piecewise-linear interpretation on `count` nodes.
    GridFunction resample(std::size_t count) const;
    PiecewiseLinear to_piecewise() const;

private:
    Interval domain_;
    std::vector<double> values_;
};

// Composite Simpson rule with explicit nodes and weights. Panel k spans
// [x_{2k}, x_{2k+2}] with midpoint x_{2k+1}.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    static QuadratureRule simpson(const Interval& iv, std::size_t panels);
    // Simpson on every sub-interval of `breaks` with `panels_per_segment` panels each.
    static QuadratureRule simpson_piecewise(std::span<const double> breaks,
                                            std::size_t panels_per_segment);

    double integrate(const RealFn& f) const;
};

inline constexpr std::size_t kDefaultPanelsPerSegment = 4;

// Composite Simpson estimate of the integral of f over iv with n panels.
// Throws NumericError when f produces a non-finite value.
double quadrature(const RealFn& f, const Interval& iv, std::size_t panels);

// L2 distance between two grid functions on the same domain, integrated over
// the union of both sample grids.
double l2_distance(const GridFunction& f, const GridFunction& g);

// Exact L1 distance between two piecewise-linear functions on the same domain.
double l1_distance(const PiecewiseLinear& f, const PiecewiseLinear& g);

std::vector<double> rho_project(const RealFn& f, const Partition& p);
PiecewiseLinear rho_star(std::span<const double> v, const Partition& p);

}  // namespace dfm
