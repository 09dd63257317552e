#include "dfm/activation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

namespace {

double clamp_arg(double x) { return std::clamp(x, -kActivationClamp, kActivationClamp); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-clamp_arg(x))); }

}  // namespace

Activation Activation::parse(std::string_view tag) {
    if (tag == "identity") return Activation(ActivationKind::Identity);
    if (tag == "tanh") return Activation(ActivationKind::Tanh);
    if (tag == "sigmoid") return Activation(ActivationKind::Sigmoid);
    throw ConfigError("unknown activation '" + std::string(tag) + "'");
}

std::string Activation::tag() const {
    switch (kind_) {
        case ActivationKind::Identity: return "identity";
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Sigmoid: return "sigmoid";
    }
    return "identity";
}

double Activation::g(double x) const {
    switch (kind_) {
        case ActivationKind::Identity: return x;
        case ActivationKind::Tanh: return std::tanh(clamp_arg(x));
        case ActivationKind::Sigmoid: return sigmoid(x);
    }
    return x;
}

double Activation::derivative(double x) const {
    switch (kind_) {
        case ActivationKind::Identity: return 1.0;
        case ActivationKind::Tanh: {
            const double t = std::tanh(clamp_arg(x));
            return 1.0 - t * t;
        }
        case ActivationKind::Sigmoid: {
            const double s = sigmoid(x);
            return s * (1.0 - s);
        }
    }
    return 1.0;
}

bool Activation::in_codomain(double y) const {
    switch (kind_) {
        case ActivationKind::Identity: return std::isfinite(y);
        case ActivationKind::Tanh: return y > -1.0 && y < 1.0;
        case ActivationKind::Sigmoid: return y > 0.0 && y < 1.0;
    }
    return false;
}

double Activation::inverse(double y) const {
    if (!in_codomain(y)) {
        std::ostringstream os;
        os << "value " << y << " is outside the codomain of " << tag();
        throw RangeError(os.str());
    }
    switch (kind_) {
        case ActivationKind::Identity: return y;
        case ActivationKind::Tanh: return std::atanh(y);
        case ActivationKind::Sigmoid: return std::log(y / (1.0 - y));
    }
    return y;
}

double Activation::inverse_derivative(double y) const {
    if (!in_codomain(y)) throw RangeError("inverse derivative outside the codomain");
    switch (kind_) {
        case ActivationKind::Identity: return 1.0;
        case ActivationKind::Tanh: return 1.0 / (1.0 - y * y);
        case ActivationKind::Sigmoid: return 1.0 / (y * (1.0 - y));
    }
    return 1.0;
}

}  // namespace dfm
