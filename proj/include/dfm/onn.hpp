#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "dfm/activation.hpp"
#include "dfm/funcspace.hpp"
#include "dfm/kernels.hpp"
#include "dfm/random.hpp"
#include "json.hpp"

namespace dfm {

inline constexpr std::size_t kDefaultOnnRefinement = 256;

struct GradientSet;

// Layer l integrates over `domain` (E_l) and produces a function on the next
// layer's domain, or on the network's output domain for the last layer.
struct OnnLayer {
    PolyKernel kernel;
    Interval domain;
    std::size_t refinement = kDefaultOnnRefinement;
};

// Operator network with separable polynomial kernels:
//   y^{l+1}(v) = g( sum_b v^b sum_a k^l[a][b] int_{E_l} y^l(u) u^a du ),  y^0 = xi.
// No bias inside the operator layers.
class PolyONN {
public:
    PolyONN(std::vector<OnnLayer> layers, Activation g, Interval output_domain,
            std::size_t output_refinement = kDefaultOnnRefinement, std::size_t output_samples = 101);

    const std::vector<OnnLayer>& layers() const { return layers_; }
    std::size_t depth() const { return layers_.size(); }
    const Activation& activation() const { return g_; }
    const Interval& output_domain() const { return output_domain_; }
    std::size_t output_refinement() const { return output_refinement_; }
    std::size_t output_samples() const { return output_samples_; }
    // Domain on which layer l's output lives.
    const Interval& codomain(std::size_t l) const;

    // Mutable coefficient access; invalidates outstanding tapes.
    PolyKernel& mutable_kernel(std::size_t l);

    // Unique per model state; tapes record it.
    std::uint64_t stamp() const { return stamp_; }
    // Number of parameter updates applied (persisted in checkpoints).
    std::uint64_t version() const { return version_; }

    std::size_t parameter_count() const;

private:
    friend PolyONN onn_from_json(const nlohmann::json& j);
    friend std::uint64_t sgd_step(PolyONN& m, const GradientSet& grads, double alpha);
    void touch();

    std::vector<OnnLayer> layers_;
    Activation g_;
    Interval output_domain_;
    std::size_t output_refinement_;
    std::size_t output_samples_;
    std::uint64_t stamp_;
    std::uint64_t version_ = 0;
};

// Memoized feedforward state.
struct ForwardTape {
    std::uint64_t stamp;
    GridFunction input;
    std::vector<std::vector<double>> moments;       // I^l_t, t < Z_X^l
    std::vector<std::vector<double>> coefficients;  // C^l_s, s < Z_Y^l

    // Pre-activation of layer l's output, sum_b v^b C^l_b.
    double preactivation(std::size_t l, double v) const;
};

struct ForwardResult {
    GridFunction output;
    ForwardTape tape;
};

struct ForwardOptions {
    // Without the cache every y^l(u) re-derives its moments recursively.
    bool use_cache = true;
};

// Gradient with respect to every k^l[a][b], congruent to the layer kernels.
struct GradientSet {
    std::vector<PolyKernel> layers;
};

ForwardResult forward(const PolyONN& m, const GridFunction& xi, ForwardOptions opts = {});

// E = 1/2 int_{E_L} (O(gamma) - delta)^2.
double loss(const PolyONN& m, const GridFunction& gamma, const GridFunction& delta);
double loss_from_tape(const PolyONN& m, const ForwardTape& tape, const GridFunction& delta);

// g'(pre-activation feeding layer-l values), l >= 1, from memoized coefficients.
double psi(const PolyONN& m, const ForwardTape& tape, std::size_t l, double j);

GradientSet backward(const PolyONN& m, const ForwardTape& tape, const GridFunction& gamma,
                     const GridFunction& delta);

// k <- k - alpha dE/dk; returns the new version.
std::uint64_t sgd_step(PolyONN& m, const GradientSet& grads, double alpha);

GradientSet zero_gradients(const PolyONN& m);
void accumulate(GradientSet& into, const GradientSet& g, double scale = 1.0);

// Exact integrals of a piecewise-linear function against u^t, t < count.
std::vector<double> piecewise_linear_moments(const GridFunction& f, std::size_t count);

PolyONN random_poly_onn(const std::vector<std::pair<std::size_t, std::size_t>>& degrees, Activation g, double scale,
                        Rng& rng, Interval domain = {0.0, 1.0}, std::size_t refinement = kDefaultOnnRefinement);

nlohmann::json onn_to_json(const PolyONN& m);
PolyONN onn_from_json(const nlohmann::json& j);

}  // namespace dfm
