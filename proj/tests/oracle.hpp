#pragma once

// Reference routines shared by the tests. Nothing here calls into the library.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// Composite 8-point Gauss-Legendre on [a, b] with `panels` equal panels.
inline double gauss(const std::function<double(double)>& f, double a, double b, std::size_t panels = 16) {
    static constexpr std::array<double, 4> x = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                                0.9602898564975363};
    static constexpr std::array<double, 4> w = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                                0.1012285362903763};
    const double h = (b - a) / static_cast<double>(panels);
    double acc = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
        const double mid = a + (static_cast<double>(p) + 0.5) * h;
        const double half = 0.5 * h;
        for (std::size_t k = 0; k < 4; ++k)
            acc += half * w[k] * (f(mid - half * x[k]) + f(mid + half * x[k]));
    }
    return acc;
}

// Same rule, one block of panels per [breaks[i], breaks[i+1]].
inline double gauss_piecewise(const std::function<double(double)>& f, const std::vector<double>& breaks,
                              std::size_t panels = 4) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) acc += gauss(f, breaks[i], breaks[i + 1], panels);
    return acc;
}

// Linear interpolation of samples placed at xs (ascending).
inline double lerp_at(const std::vector<double>& xs, const std::vector<double>& ys, double u) {
    if (u <= xs.front()) return ys.front();
    if (u >= xs.back()) return ys.back();
    std::size_t i = 0;
    while (xs[i + 1] < u) ++i;
    const double t = (u - xs[i]) / (xs[i + 1] - xs[i]);
    return ys[i] + t * (ys[i + 1] - ys[i]);
}

// y_j = sum_k h_k x_{j + k - r}, zero padded, r = (len - 1) / 2.
inline std::vector<double> correlate(const std::vector<double>& h, const std::vector<double>& x) {
    const long r = static_cast<long>(h.size() - 1) / 2;
    std::vector<double> y(x.size(), 0.0);
    for (long j = 0; j < static_cast<long>(x.size()); ++j)
        for (long k = 0; k < static_cast<long>(h.size()); ++k) {
            const long i = j + k - r;
            if (i >= 0 && i < static_cast<long>(x.size()))
                y[static_cast<std::size_t>(j)] += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(i)];
        }
    return y;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Five-point stencil, O(h^4).
inline double five_point_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
