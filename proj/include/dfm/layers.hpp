#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dfm/activation.hpp"
#include "dfm/funcspace.hpp"
#include "dfm/kernels.hpp"
#include "json.hpp"

namespace dfm {

// Vector -> vector: W^T x + bias, W is (in-dim x out-dim).
struct NDiscrete {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;

    NDiscrete(Eigen::MatrixXd w, Eigen::VectorXd b);
    std::size_t in_dim() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t out_dim() const { return static_cast<std::size_t>(weights.cols()); }
};

// Function -> function: T[y](v) = int_inDomain y(u) omega(u, v) du, sampled at
// outResolution uniform points of outDomain.
struct OOperational {
    Kernel kernel;
    Interval in_domain;
    Interval out_domain;
    std::size_t out_resolution;
    std::size_t panels_per_segment = kDefaultPanelsPerSegment;
};

// Function -> vector: component i = int w_i(u) y(u) du + bias_i.
struct FFunctional {
    std::vector<GridFunction> weight_fns;
    Eigen::VectorXd bias;

    FFunctional(std::vector<GridFunction> w, Eigen::VectorXd b);
    const Interval& in_domain() const { return weight_fns.front().domain(); }
};

// Vector -> function: sum_i x_i w_i(v).
struct DDefunctional {
    std::vector<GridFunction> weight_fns;

    explicit DDefunctional(std::vector<GridFunction> w);
    const Interval& out_domain() const { return weight_fns.front().domain(); }
};

using LayerEdge = std::variant<NDiscrete, OOperational, FFunctional, DDefunctional>;

Eigen::VectorXd apply_n(const NDiscrete& e, const Eigen::VectorXd& x);
GridFunction apply_o(const OOperational& e, const GridFunction& f);
Eigen::VectorXd apply_f(const FFunctional& e, const GridFunction& f);
// Sampled at `resolution` points of the weight functions' domain; 0 selects
// the first weight function's sample count.
GridFunction apply_d(const DDefunctional& e, std::span<const double> x, std::size_t resolution = 0);

struct FiniteSpace {
    std::size_t dim;
};

struct FunctionSpace {
    Interval domain;
    std::size_t resolution;
};

using NodeSpace = std::variant<FiniteSpace, FunctionSpace>;
using NodeValue = std::variant<Eigen::VectorXd, GridFunction>;

struct SkeletonNode {
    std::string id;
    NodeSpace space;
    Activation activation;
};

struct SkeletonEdge {
    std::size_t from;
    std::size_t to;
    LayerEdge op;
};

// Directed acyclic graph of vector- and function-space nodes. Edges carry
// pre-activations; nodes sum their incoming edges in insertion order and
// apply their activation.
class Skeleton {
public:
    std::size_t add_node(std::string id, NodeSpace space, Activation activation = {});
    // Rejects ops whose variant or shape disagrees with the endpoint spaces,
    // and edges that would close a cycle.
    void add_edge(std::size_t from, std::size_t to, LayerEdge op);
    void set_input(std::size_t node);
    void set_output(std::size_t node);

    const std::vector<SkeletonNode>& nodes() const { return nodes_; }
    const std::vector<SkeletonEdge>& edges() const { return edges_; }
    std::size_t input() const;
    std::size_t output() const;
    std::size_t node_index(const std::string& id) const;

    // Kahn order with the smallest ready index first.
    std::vector<std::size_t> topological_order() const;
    bool is_topological(std::span<const std::size_t> order) const;

private:
    bool reachable(std::size_t from, std::size_t to) const;

    std::vector<SkeletonNode> nodes_;
    std::vector<SkeletonEdge> edges_;
    std::optional<std::size_t> input_;
    std::optional<std::size_t> output_;
};

NodeValue forward_skeleton(const Skeleton& s, const NodeValue& input);
// Evaluates in a caller-supplied topological order.
NodeValue forward_skeleton(const Skeleton& s, const NodeValue& input,
                           std::span<const std::size_t> order);

nlohmann::json grid_to_json(const GridFunction& f);
GridFunction grid_from_json(const nlohmann::json& j);
nlohmann::json edge_to_json(const LayerEdge& e);
LayerEdge edge_from_json(const nlohmann::json& j);
nlohmann::json skeleton_to_json(const Skeleton& s);
Skeleton skeleton_from_json(const nlohmann::json& j);

}  // namespace dfm
