#include "dfm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dfm/error.hpp"

namespace dfm {

namespace {

constexpr double kDegenerateFrequency = 1e-9;

// Integrals over t in [0, 1] of t^0 * (n + t)^m and t * (n + t)^m, expanded
// binomially so that nonnegative n never cancels.
void monomial_segment_moments(double n, std::size_t max_power, std::vector<double>& q,
                              std::vector<double>& v) {
    q.assign(max_power + 1, 0.0);
    v.assign(max_power + 1, 0.0);
    std::vector<double> binom{1.0};
    for (std::size_t m = 0; m <= max_power; ++m) {
        if (m > 0) {
            std::vector<double> next(m + 1, 1.0);
            for (std::size_t i = 1; i < m; ++i) next[i] = binom[i - 1] + binom[i];
            binom = std::move(next);
        }
        double npow = 1.0;  // n^(m - i), accumulated from i = m downwards
        double qs = 0.0;
        double vs = 0.0;
        for (std::size_t i = m + 1; i-- > 0;) {
            const auto di = static_cast<double>(i);
            qs += binom[i] * npow / (di + 1.0);
            vs += binom[i] * npow / (di + 2.0);
            npow *= n;
        }
        q[m] = qs;
        v[m] = vs;
    }
}

// int_0^1 t cos(a t) dt
double cos_first_moment(double a) {
    const double half = 0.5 * a;
    const double sinc_half = std::sin(half) / half;
    return std::sin(a) / a - 0.5 * sinc_half * sinc_half;
}

// int_0^1 t sin(a t) dt
double sin_first_moment(double a) {
    if (std::abs(a) < 1e-3) {
        const double a2 = a * a;
        return a * (1.0 / 3.0 - a2 * (1.0 / 30.0 - a2 / 840.0));
    }
    return (std::sin(a) - a * std::cos(a)) / (a * a);
}

double profile_value(const std::vector<double>& taps, double x) {
    const auto last = static_cast<double>(taps.size() - 1);
    if (x < 0.0 || x > last) return 0.0;
    if (taps.size() == 1) return taps[0];
    const double fl = std::floor(x);
    auto i = static_cast<std::size_t>(fl);
    if (i >= taps.size() - 1) return taps.back();
    const double t = x - fl;
    return taps[i] + t * (taps[i + 1] - taps[i]);
}

}  // namespace

PolyKernel::PolyKernel(std::size_t zx, std::size_t zy) : PolyKernel(zx, zy, std::vector<double>(zx * zy, 0.0)) {}

PolyKernel::PolyKernel(std::size_t zx, std::size_t zy, std::vector<double> coeffs_row_major)
    : zx_(zx), zy_(zy), k_(std::move(coeffs_row_major)) {
    if (zx_ == 0 || zy_ == 0) throw ShapeError("polynomial kernel degree bounds must be positive");
    if (k_.size() != zx_ * zy_) throw ShapeError("polynomial kernel coefficient count must be Z_X * Z_Y");
}

PolyKernel PolyKernel::constant(double c) { return PolyKernel(1, 1, {c}); }

double PolyKernel::operator()(double u, double v) const {
    double outer = 0.0;
    for (std::size_t b = zy_; b-- > 0;) {
        double inner = 0.0;
        for (std::size_t a = zx_; a-- > 0;) inner = inner * u + coeff(a, b);
        outer = outer * v + inner;
    }
    return outer;
}

WaveKernel::WaveKernel(double s0, std::vector<Wave> waves, std::size_t dim)
    : s0_(s0), waves_(std::move(waves)), dim_(dim) {
    if (dim_ != 1 && dim_ != 2) throw ShapeError("wave kernels support 1-D and 2-D domains");
    for (const auto& w : waves_)
        if (w.freq.size() != 2 * dim_) throw ShapeError("wave frequency must have 2 * dim entries");
}

double WaveKernel::operator()(double u, double v) const {
    if (dim_ != 1) throw ShapeError("two-argument evaluation needs a 1-D wave kernel");
    double acc = s0_;
    for (const auto& w : waves_) acc += w.amp * std::cos(w.freq[0] * u + w.freq[1] * v - w.phase);
    return acc;
}

double WaveKernel::eval_point(std::span<const double> point) const {
    if (point.size() != 2 * dim_) throw ShapeError("wave kernel point has the wrong dimension");
    double acc = s0_;
    for (const auto& w : waves_) {
        double arg = -w.phase;
        for (std::size_t d = 0; d < point.size(); ++d) arg += w.freq[d] * point[d];
        acc += w.amp * std::cos(arg);
    }
    return acc;
}

std::vector<double> WaveKernel::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    out.push_back(s0_);
    for (const auto& w : waves_) {
        out.push_back(w.amp);
        out.insert(out.end(), w.freq.begin(), w.freq.end());
        out.push_back(w.phase);
    }
    return out;
}

void WaveKernel::set_parameters(std::span<const double> params) {
    if (params.size() != parameter_count()) throw ShapeError("wave parameter vector has the wrong length");
    std::size_t i = 0;
    s0_ = params[i++];
    for (auto& w : waves_) {
        w.amp = params[i++];
        for (auto& f : w.freq) f = params[i++];
        w.phase = params[i++];
    }
}

void WaveKernel::parameter_gradient(double u, double v, std::span<double> out) const {
    if (dim_ != 1) throw ShapeError("parameter_gradient needs a 1-D wave kernel");
    if (out.size() != parameter_count()) throw ShapeError("gradient buffer has the wrong length");
    std::size_t i = 0;
    out[i++] = 1.0;
    for (const auto& w : waves_) {
        const double arg = w.freq[0] * u + w.freq[1] * v - w.phase;
        const double c = std::cos(arg);
        const double s = std::sin(arg);
        out[i++] = c;
        out[i++] = -w.amp * s * u;
        out[i++] = -w.amp * s * v;
        out[i++] = w.amp * s;
    }
}

ShiftInvariantKernel::ShiftInvariantKernel(std::vector<double> taps, double speed)
    : taps_(std::move(taps)), c_(speed) {
    if (taps_.empty()) throw ShapeError("shift-invariant kernel needs at least one tap");
    if (!(c_ != 0.0) || !std::isfinite(c_)) throw DomainError("shift-invariant kernel speed must be finite and nonzero");
}

double ShiftInvariantKernel::profile(double x) const { return profile_value(taps_, x); }

double eval_kernel(const Kernel& k, double u, double v) {
    return std::visit([&](const auto& kk) { return kk(u, v); }, k);
}

std::size_t parameter_count(const Kernel& k) {
    return std::visit([](const auto& kk) { return kk.parameter_count(); }, k);
}

SegmentMoments poly_segment_moments(const PolyKernel& k, double n, double v) {
    std::vector<double> qm;
    std::vector<double> vm;
    monomial_segment_moments(n, k.zx() - 1, qm, vm);
    SegmentMoments out;
    double vpow = 1.0;
    for (std::size_t b = 0; b < k.zy(); ++b) {
        double qb = 0.0;
        double vb = 0.0;
        for (std::size_t a = 0; a < k.zx(); ++a) {
            qb += k.coeff(a, b) * qm[a];
            vb += k.coeff(a, b) * vm[a];
        }
        out.q += vpow * qb;
        out.v += vpow * vb;
        vpow *= v;
    }
    return out;
}

SegmentMoments wave_segment_moments(const WaveKernel& k, double n, double v) {
    if (k.dim() != 1) throw CapabilityError("segment moments need a 1-D wave kernel");
    SegmentMoments out{k.s0(), 0.5 * k.s0()};
    for (const auto& w : k.waves()) {
        const double a = w.freq[0];
        const double phi = a * n + w.freq[1] * v - w.phase;
        if (std::abs(a) < kDegenerateFrequency) {
            const double c = std::cos(phi);
            out.q += w.amp * c;
            out.v += w.amp * 0.5 * c;
            continue;
        }
        // sin(a + phi) - sin(phi) = 2 cos(phi + a/2) sin(a/2)
        const double q = 2.0 * std::cos(phi + 0.5 * a) * std::sin(0.5 * a) / a;
        const double vv = std::cos(phi) * cos_first_moment(a) - std::sin(phi) * sin_first_moment(a);
        out.q += w.amp * q;
        out.v += w.amp * vv;
    }
    return out;
}

double ultrahyperbolic_residual(const WaveKernel& k, double c,
                                std::span<const std::pair<double, double>> points) {
    if (!std::isfinite(c)) throw DomainError("wave speed must be finite");
    if (k.dim() != 1) throw CapabilityError("ultrahyperbolic residual implemented for 1-D wave kernels");
    const double c2 = c * c;
    double worst = 0.0;
    for (const auto& [u, v] : points) {
        double r = 0.0;
        for (const auto& w : k.waves()) {
            const double wu = w.freq[0];
            const double wv = w.freq[1];
            const double cosv = std::cos(wu * u + wv * v - w.phase);
            // omega_uu - c^2 omega_vv = sum s (c^2 wv^2 - wu^2) cos
            r += w.amp * (c2 * wv * wv - wu * wu) * cosv;
        }
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

ShiftInvariantKernel conv_profile_kernel(std::span<const double> h, double c) {
    if (h.empty()) throw ShapeError("convolution filter must not be empty");
    return {std::vector<double>(h.begin(), h.end()), c};
}

WaveKernel init_wave_kernel(std::size_t waves, Rng& rng, std::size_t dim, double scale) {
    if (waves == 0) return WaveKernel(0.0, {}, dim);
    const double r = 1.0 / std::sqrt(static_cast<double>(waves));
    const double b = static_cast<double>(waves);
    std::vector<Wave> ws;
    ws.reserve(waves);
    for (std::size_t i = 0; i < waves; ++i) {
        Wave w;
        w.amp = uniform(rng, -r, r);
        const double radius = scale * static_cast<double>(i + 1) / b;
        w.freq.resize(2 * dim);
        if (dim == 1) {
            const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            w.freq[0] = radius * std::cos(theta);
            w.freq[1] = radius * std::sin(theta);
        } else {
            double norm = 0.0;
            do {
                norm = 0.0;
                for (auto& f : w.freq) {
                    f = standard_normal(rng);
                    norm += f * f;
                }
            } while (norm < 1e-12);
            norm = std::sqrt(norm);
            for (auto& f : w.freq) f *= radius / norm;
        }
        w.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        ws.push_back(std::move(w));
    }
    return WaveKernel(0.0, std::move(ws), dim);
}

nlohmann::json kernel_to_json(const Kernel& k) {
    using nlohmann::json;
    if (const auto* p = std::get_if<PolyKernel>(&k)) {
        json rows = json::array();
        for (std::size_t a = 0; a < p->zx(); ++a) {
            json row = json::array();
            for (std::size_t b = 0; b < p->zy(); ++b) row.push_back(p->coeff(a, b));
            rows.push_back(std::move(row));
        }
        return {{"type", "poly"}, {"coeffs", std::move(rows)}};
    }
    if (const auto* w = std::get_if<WaveKernel>(&k)) {
        json waves = json::array();
        for (const auto& wv : w->waves())
            waves.push_back({{"amp", wv.amp}, {"freq", wv.freq}, {"phase", wv.phase}});
        return {{"type", "wave"}, {"dim", w->dim()}, {"s0", w->s0()}, {"waves", std::move(waves)}};
    }
    const auto& s = std::get<ShiftInvariantKernel>(k);
    return {{"type", "shift"}, {"taps", s.taps()}, {"c", s.speed()}};
}

Kernel kernel_from_json(const nlohmann::json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        if (type == "poly") {
            const auto& rows = j.at("coeffs");
            const std::size_t zx = rows.size();
            const std::size_t zy = zx ? rows.at(0).size() : 0;
            std::vector<double> flat;
            for (const auto& row : rows) {
                if (row.size() != zy) throw FormatError("poly kernel rows differ in length");
                for (const auto& x : row) flat.push_back(x.get<double>());
            }
            return PolyKernel(zx, zy, std::move(flat));
        }
        if (type == "wave") {
            std::vector<Wave> waves;
            for (const auto& w : j.at("waves"))
                waves.push_back({w.at("amp").get<double>(), w.at("freq").get<std::vector<double>>(),
                                 w.at("phase").get<double>()});
            return WaveKernel(j.at("s0").get<double>(), std::move(waves),
                              j.value("dim", std::size_t{1}));
        }
        if (type == "shift")
            return ShiftInvariantKernel(j.at("taps").get<std::vector<double>>(), j.at("c").get<double>());
        throw FormatError("unknown kernel type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed kernel JSON: ") + e.what());
    }
}

}  // namespace dfm
