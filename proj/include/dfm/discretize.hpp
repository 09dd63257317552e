#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "dfm/activation.hpp"
#include "dfm/funcspace.hpp"
#include "dfm/kernels.hpp"
#include "dfm/layers.hpp"

namespace dfm {

enum class DiscretizationMode { Integrate, Sample };

// How an operator layer is turned into a weight matrix.
//
// Integrate mode places the N input samples at integer abscissae 1..N and
// evaluates the kernel at the output indices (default 1..M). Sample mode uses
// the normalized lattice i / N, j / M on [0, 1].
struct DiscretizationSpec {
    std::size_t in_samples;
    std::vector<double> out_indices;
    DiscretizationMode mode = DiscretizationMode::Integrate;

    DiscretizationSpec(std::size_t n, std::vector<double> outs, DiscretizationMode m = DiscretizationMode::Integrate);
    static DiscretizationSpec with_outputs(std::size_t n, std::size_t m,
                                           DiscretizationMode mode = DiscretizationMode::Integrate);
};

// Exact weights for piecewise-linear inputs: W(1,j) = Q_1 - V_1,
// W(n,j) = Q_n - V_n + V_{n-1}, W(N,j) = V_{N-1}, with Q_n, V_n the segment
// moments of the kernel on [n, n+1] at v = j.
NDiscrete integrate_instantiate(const Kernel& k, const DiscretizationSpec& spec);

// W(i,j) = omega(i / in_shape, j / out_shape) for i, j starting at 1.
NDiscrete sample_instantiate(const Kernel& k, std::size_t in_shape, std::size_t out_shape);

// Dispatches on spec.mode. In sample mode the output count is out_indices.size().
NDiscrete instantiate(const Kernel& k, const DiscretizationSpec& spec);

// 2-D sampled instantiation for image layers: rows index input pixels
// (i1, i2) row-major on an in_side x in_side grid, columns output pixels.
Eigen::MatrixXd sample_instantiate_2d(const WaveKernel& k, std::size_t in_side, std::size_t out_side);
// One 2-D WaveLayer pre-activation: (1 / in_side^2) W^T x on a row-major image.
std::vector<double> apply_wave_layer_2d(const WaveKernel& k, std::span<const double> image, std::size_t in_side,
                                        std::size_t out_side);

struct ConvEquivalence {
    ShiftInvariantKernel kernel;
    Eigen::MatrixXd weights;  // N x N, Toeplitz
};

// Centered odd filter h with r = (len - 1) / 2. W(i,j) = F(i - j + r) so that
// (W^T x)_j = sum_k h_k x_{j + k - r} with zero padding.
ConvEquivalence conv_equivalence(std::span<const double> h, std::size_t n);

// Kernel whose operator layer maps the fixed input xi onto g^{-1}(f):
//   omega(u, v) = (g^{-1})'(h(Xi(u), v)) * dh/dx(Xi(u), v)
//   h(x, v)     = g(g^{-1}(f(v)) (x - Xi(a)) / (Xi(b) - Xi(a)))
// with Xi the exact running integral of xi, so g(int xi omega du) = f(v).
class PointApproxKernel {
public:
    PointApproxKernel(const GridFunction& xi, const GridFunction& target, Activation g);

    double operator()(double u, double v) const;
    double running_integral(double u) const;
    double total_integral() const { return total_; }
    const GridFunction& input() const { return xi_; }

private:
    GridFunction xi_;
    GridFunction target_;
    Activation g_;
    std::vector<double> cumulative_;  // Xi at the input nodes
    double total_;
};

PointApproxKernel point_approx_kernel(const GridFunction& xi, const GridFunction& target, Activation g);

// int_domain xi(u) omega(u, v) du by Simpson on the input grid, with
// `panels` panels in total spread over the input's segments.
double apply_point_kernel(const PointApproxKernel& k, double v, std::size_t panels);

}  // namespace dfm
