#pragma once

#include <string>
#include <string_view>

namespace dfm {

enum class ActivationKind { Identity, Tanh, Sigmoid };

// Node nonlinearity g with its derivative and inverse. tanh and sigmoid clamp
// their argument to +-50 before exponentiating.
class Activation {
public:
    constexpr Activation() = default;
    constexpr explicit Activation(ActivationKind kind) : kind_(kind) {}

    static Activation parse(std::string_view tag);

    ActivationKind kind() const { return kind_; }
    std::string tag() const;

    double g(double x) const;
    double derivative(double x) const;
    // Throws RangeError for y outside the open codomain.
    double inverse(double y) const;
    // d/dy of the inverse.
    double inverse_derivative(double y) const;
    bool in_codomain(double y) const;

    friend bool operator==(const Activation&, const Activation&) = default;

private:
    ActivationKind kind_ = ActivationKind::Identity;
};

inline constexpr double kActivationClamp = 50.0;

}  // namespace dfm
