#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "dfm/random.hpp"
#include "json.hpp"

namespace dfm {

// omega(u, v) = sum_a sum_b k[a][b] u^a v^b with 0 <= a < Z_X, 0 <= b < Z_Y.
class PolyKernel {
public:
    PolyKernel(std::size_t zx, std::size_t zy);
    PolyKernel(std::size_t zx, std::size_t zy, std::vector<double> coeffs_row_major);

    static PolyKernel constant(double c);

    std::size_t zx() const { return zx_; }
    std::size_t zy() const { return zy_; }

    double coeff(std::size_t a, std::size_t b) const { return k_[a * zy_ + b]; }
    double& coeff(std::size_t a, std::size_t b) { return k_[a * zy_ + b]; }
    const std::vector<double>& coeffs() const { return k_; }
    std::vector<double>& coeffs() { return k_; }

    double operator()(double u, double v) const;
    std::size_t parameter_count() const { return k_.size(); }

    friend bool operator==(const PolyKernel&, const PolyKernel&) = default;

private:
    std::size_t zx_;
    std::size_t zy_;
    std::vector<double> k_;
};

// One plane-wave component s * cos(w . (u, v) - p). For 1-D layers w has two
// entries (u, v); for 2-D layers four (u1, u2, v1, v2).
struct Wave {
    double amp = 0.0;
    std::vector<double> freq;
    double phase = 0.0;

    friend bool operator==(const Wave&, const Wave&) = default;
};

// omega(u, v) = s0 + sum_i s_i cos(w_i . (u, v) - p_i)
class WaveKernel {
public:
    explicit WaveKernel(double s0 = 0.0, std::vector<Wave> waves = {}, std::size_t dim = 1);

    double s0() const { return s0_; }
    double& s0() { return s0_; }
    const std::vector<Wave>& waves() const { return waves_; }
    std::vector<Wave>& waves() { return waves_; }
    std::size_t dim() const { return dim_; }

    double operator()(double u, double v) const;
    // 2-D layers: point = (u1, u2, v1, v2).
    double eval_point(std::span<const double> point) const;

    std::size_t parameter_count() const { return 1 + waves_.size() * (2 + 2 * dim_); }

    // Flat parameter order: s0, then per wave (amp, freq..., phase).
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> params);

    // d omega / d parameters at (u, v), in parameters() order. 1-D only.
    void parameter_gradient(double u, double v, std::span<double> out) const;

    friend bool operator==(const WaveKernel&, const WaveKernel&) = default;

private:
    double s0_;
    std::vector<Wave> waves_;
    std::size_t dim_;
};

// omega(u, v) = F(u - c v), where F is the piecewise-linear interpolant of
// taps placed at integer abscissae 0..K-1 and zero outside [0, K-1].
class ShiftInvariantKernel {
public:
    ShiftInvariantKernel(std::vector<double> taps, double speed);

    const std::vector<double>& taps() const { return taps_; }
    double speed() const { return c_; }

    double profile(double x) const;
    double operator()(double u, double v) const { return profile(u - c_ * v); }
    std::size_t parameter_count() const { return taps_.size(); }

    friend bool operator==(const ShiftInvariantKernel&, const ShiftInvariantKernel&) = default;

private:
    std::vector<double> taps_;
    double c_;
};

using Kernel = std::variant<PolyKernel, WaveKernel, ShiftInvariantKernel>;

double eval_kernel(const Kernel& k, double u, double v);
std::size_t parameter_count(const Kernel& k);

// Per-segment moments over [n, n+1] along u with v held fixed.
struct SegmentMoments {
    double q = 0.0;  // integral of omega
    double v = 0.0;  // integral of (u - n) omega
};

SegmentMoments poly_segment_moments(const PolyKernel& k, double n, double v);
SegmentMoments wave_segment_moments(const WaveKernel& k, double n, double v);

// max over points of |omega_uu - c^2 omega_vv|, from analytic second partials.
double ultrahyperbolic_residual(const WaveKernel& k, double c,
                                std::span<const std::pair<double, double>> points);

ShiftInvariantKernel conv_profile_kernel(std::span<const double> h, double c);

// Random wave initialization: amplitudes uniform(-r, r) with r = 1/sqrt(b),
// frequency i on a shell of radius scale (i + 1) / b with a uniform direction,
// phases uniform(0, 2 pi).
WaveKernel init_wave_kernel(std::size_t waves, Rng& rng, std::size_t dim = 1, double scale = std::numbers::pi);

// JSON: {"type": "poly", "coeffs": [[...]]}, {"type": "wave", "s0", "dim",
// "waves": [{"amp", "freq", "phase"}]}, {"type": "shift", "taps", "c"}.
nlohmann::json kernel_to_json(const Kernel& k);
Kernel kernel_from_json(const nlohmann::json& j);

}  // namespace dfm
