#include "dfm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

namespace {

std::vector<double> merged(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

nlohmann::json interval_to_json(const Interval& iv) { return {iv.lo(), iv.hi()}; }

Interval interval_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw FormatError("interval must be a [lo, hi] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != cols) throw FormatError("ragged matrix rows");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto vals = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::string describe(const NodeSpace& s) {
    std::ostringstream os;
    if (const auto* f = std::get_if<FiniteSpace>(&s)) {
        os << "finite(" << f->dim << ")";
    } else {
        const auto& fs = std::get<FunctionSpace>(s);
        os << "function([" << fs.domain.lo() << ", " << fs.domain.hi() << "], " << fs.resolution << ")";
    }
    return os.str();
}

void check_edge_fits(const LayerEdge& op, const NodeSpace& from, const NodeSpace& to) {
    const auto* ff = std::get_if<FiniteSpace>(&from);
    const auto* fn = std::get_if<FunctionSpace>(&from);
    const auto* tf = std::get_if<FiniteSpace>(&to);
    const auto* tn = std::get_if<FunctionSpace>(&to);
    auto reject = [&](const char* what) {
        throw ShapeError(std::string(what) + " edge cannot connect " + describe(from) + " to " + describe(to));
    };
    if (const auto* n = std::get_if<NDiscrete>(&op)) {
        if (!ff || !tf || n->in_dim() != ff->dim || n->out_dim() != tf->dim) reject("n-discrete");
    } else if (const auto* o = std::get_if<OOperational>(&op)) {
        if (!fn || !tn || !(o->in_domain == fn->domain) || !(o->out_domain == tn->domain))
            reject("o-operational");
    } else if (const auto* f = std::get_if<FFunctional>(&op)) {
        if (!fn || !tf || f->weight_fns.size() != tf->dim || !(f->in_domain() == fn->domain))
            reject("f-functional");
    } else {
        const auto& d = std::get<DDefunctional>(op);
        if (!ff || !tn || d.weight_fns.size() != ff->dim || !(d.out_domain() == tn->domain))
            reject("d-defunctional");
    }
}

NodeValue edge_preactivation(const LayerEdge& op, const NodeValue& in, const NodeSpace& to) {
    if (const auto* n = std::get_if<NDiscrete>(&op)) return apply_n(*n, std::get<Eigen::VectorXd>(in));
    if (const auto* o = std::get_if<OOperational>(&op)) return apply_o(*o, std::get<GridFunction>(in));
    if (const auto* f = std::get_if<FFunctional>(&op)) return apply_f(*f, std::get<GridFunction>(in));
    const auto& x = std::get<Eigen::VectorXd>(in);
    const auto& space = std::get<FunctionSpace>(to);
    return apply_d(std::get<DDefunctional>(op), std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                   space.resolution);
}

NodeValue conform_input(const NodeValue& input, const NodeSpace& space) {
    if (const auto* f = std::get_if<FiniteSpace>(&space)) {
        const auto* x = std::get_if<Eigen::VectorXd>(&input);
        if (!x || static_cast<std::size_t>(x->size()) != f->dim)
            throw ShapeError("input does not match the input node's " + describe(space) + " space");
        return *x;
    }
    const auto& fs = std::get<FunctionSpace>(space);
    const auto* g = std::get_if<GridFunction>(&input);
    if (!g || !(g->domain() == fs.domain))
        throw ShapeError("input does not match the input node's " + describe(space) + " space");
    return g->resample(fs.resolution);
}

}  // namespace

NDiscrete::NDiscrete(Eigen::MatrixXd w, Eigen::VectorXd b) : weights(std::move(w)), bias(std::move(b)) {
    if (bias.size() != weights.cols()) throw ShapeError("n-discrete bias length must equal the output dimension");
}

FFunctional::FFunctional(std::vector<GridFunction> w, Eigen::VectorXd b)
    : weight_fns(std::move(w)), bias(std::move(b)) {
    if (weight_fns.empty()) throw ShapeError("f-functional layer needs at least one weight function");
    if (static_cast<std::size_t>(bias.size()) != weight_fns.size())
        throw ShapeError("f-functional bias length must equal the number of weight functions");
    for (const auto& w_i : weight_fns)
        if (!(w_i.domain() == weight_fns.front().domain()))
            throw ShapeError("f-functional weight functions must share a domain");
}

DDefunctional::DDefunctional(std::vector<GridFunction> w) : weight_fns(std::move(w)) {
    if (weight_fns.empty()) throw ShapeError("d-defunctional layer needs at least one weight function");
    for (const auto& w_i : weight_fns)
        if (!(w_i.domain() == weight_fns.front().domain()))
            throw ShapeError("d-defunctional weight functions must share a domain");
}

Eigen::VectorXd apply_n(const NDiscrete& e, const Eigen::VectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != e.in_dim()) {
        std::ostringstream os;
        os << "apply_n: input has " << x.size() << " entries, layer expects " << e.in_dim();
        throw ShapeError(os.str());
    }
    return e.weights.transpose() * x + e.bias;
}

GridFunction apply_o(const OOperational& e, const GridFunction& f) {
    if (!(f.domain() == e.in_domain)) throw ShapeError("apply_o: input domain differs from the layer's domain");
    const auto breaks = f.nodes();
    const auto rule = QuadratureRule::simpson_piecewise(breaks, e.panels_per_segment);
    std::vector<double> fw(rule.nodes.size());
    for (std::size_t q = 0; q < fw.size(); ++q) fw[q] = rule.weights[q] * f.eval(rule.nodes[q]);
    return GridFunction::sample(e.out_domain, e.out_resolution, [&](double v) {
        double acc = 0.0;
        for (std::size_t q = 0; q < fw.size(); ++q) acc += fw[q] * eval_kernel(e.kernel, rule.nodes[q], v);
        if (!std::isfinite(acc)) throw NumericError("apply_o: non-finite integral");
        return acc;
    });
}

Eigen::VectorXd apply_f(const FFunctional& e, const GridFunction& f) {
    if (!(f.domain() == e.in_domain())) throw ShapeError("apply_f: input domain differs from the weight functions' domain");
    Eigen::VectorXd out(static_cast<Eigen::Index>(e.weight_fns.size()));
    const auto fnodes = f.nodes();
    for (std::size_t i = 0; i < e.weight_fns.size(); ++i) {
        const auto& w = e.weight_fns[i];
        const auto breaks = merged(fnodes, w.nodes());
        const auto rule = QuadratureRule::simpson_piecewise(breaks, kDefaultPanelsPerSegment);
        out[static_cast<Eigen::Index>(i)] =
            rule.integrate([&](double u) { return w.eval(u) * f.eval(u); }) + e.bias[static_cast<Eigen::Index>(i)];
    }
    return out;
}

GridFunction apply_d(const DDefunctional& e, std::span<const double> x, std::size_t resolution) {
    if (x.size() != e.weight_fns.size()) {
        std::ostringstream os;
        os << "apply_d: input has " << x.size() << " entries, layer has " << e.weight_fns.size()
           << " weight functions";
        throw ShapeError(os.str());
    }
    const std::size_t n = resolution ? resolution : e.weight_fns.front().size();
    return GridFunction::sample(e.out_domain(), n, [&](double v) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * e.weight_fns[i].eval(v);
        return acc;
    });
}

std::size_t Skeleton::add_node(std::string id, NodeSpace space, Activation activation) {
    for (const auto& n : nodes_)
        if (n.id == id) throw ShapeError("duplicate node id '" + id + "'");
    if (const auto* fs = std::get_if<FunctionSpace>(&space); fs && fs->resolution < 2)
        throw ShapeError("function-space node needs resolution >= 2");
    if (const auto* f = std::get_if<FiniteSpace>(&space); f && f->dim == 0)
        throw ShapeError("finite-space node needs dim >= 1");
    nodes_.push_back({std::move(id), std::move(space), activation});
    return nodes_.size() - 1;
}

bool Skeleton::reachable(std::size_t from, std::size_t to) const {
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<std::size_t> stack{from};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        if (n == to) return true;
        if (seen[n]) continue;
        seen[n] = true;
        for (const auto& e : edges_)
            if (e.from == n) stack.push_back(e.to);
    }
    return false;
}

void Skeleton::add_edge(std::size_t from, std::size_t to, LayerEdge op) {
    if (from >= nodes_.size() || to >= nodes_.size()) throw ShapeError("edge endpoint out of range");
    if (from == to || reachable(to, from)) throw ShapeError("edge would create a cycle");
    check_edge_fits(op, nodes_[from].space, nodes_[to].space);
    edges_.push_back({from, to, std::move(op)});
}

void Skeleton::set_input(std::size_t node) {
    if (node >= nodes_.size()) throw ShapeError("input node out of range");
    input_ = node;
}

void Skeleton::set_output(std::size_t node) {
    if (node >= nodes_.size()) throw ShapeError("output node out of range");
    output_ = node;
}

std::size_t Skeleton::input() const {
    if (!input_) throw ShapeError("skeleton has no designated input node");
    return *input_;
}

std::size_t Skeleton::output() const {
    if (!output_) throw ShapeError("skeleton has no designated output node");
    return *output_;
}

std::size_t Skeleton::node_index(const std::string& id) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].id == id) return i;
    throw ShapeError("unknown node id '" + id + "'");
}

std::vector<std::size_t> Skeleton::topological_order() const {
    std::vector<std::size_t> indeg(nodes_.size(), 0);
    for (const auto& e : edges_) ++indeg[e.to];
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (indeg[i] == 0) ready.push(i);
    std::vector<std::size_t> order;
    while (!ready.empty()) {
        const auto n = ready.top();
        ready.pop();
        order.push_back(n);
        for (const auto& e : edges_)
            if (e.from == n && --indeg[e.to] == 0) ready.push(e.to);
    }
    if (order.size() != nodes_.size()) throw ShapeError("skeleton contains a cycle");
    return order;
}

bool Skeleton::is_topological(std::span<const std::size_t> order) const {
    if (order.size() != nodes_.size()) return false;
    std::vector<std::size_t> pos(nodes_.size(), nodes_.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i] >= nodes_.size() || pos[order[i]] != nodes_.size()) return false;
        pos[order[i]] = i;
    }
    return std::all_of(edges_.begin(), edges_.end(), [&](const auto& e) { return pos[e.from] < pos[e.to]; });
}

NodeValue forward_skeleton(const Skeleton& s, const NodeValue& input) {
    const auto order = s.topological_order();
    return forward_skeleton(s, input, order);
}

NodeValue forward_skeleton(const Skeleton& s, const NodeValue& input, std::span<const std::size_t> order) {
    if (!s.is_topological(order)) throw ShapeError("evaluation order is not a topological order of the skeleton");
    const auto& nodes = s.nodes();
    const auto in = s.input();
    std::vector<std::optional<NodeValue>> values(nodes.size());
    values[in] = conform_input(input, nodes[in].space);

    for (const auto n : order) {
        if (n == in) continue;
        const auto& node = nodes[n];
        std::optional<NodeValue> sum;
        for (const auto& e : s.edges()) {
            if (e.to != n || !values[e.from]) continue;
            auto pre = edge_preactivation(e.op, *values[e.from], node.space);
            if (!sum) {
                if (auto* g = std::get_if<GridFunction>(&pre)) {
                    const auto& fs = std::get<FunctionSpace>(node.space);
                    sum = g->resample(fs.resolution);
                } else {
                    sum = std::move(pre);
                }
                continue;
            }
            if (auto* v = std::get_if<Eigen::VectorXd>(&*sum)) {
                const auto& add = std::get<Eigen::VectorXd>(pre);
                if (add.size() != v->size()) throw ShapeError("incoming vector pre-activations differ in size");
                *v += add;
            } else {
                auto& acc = std::get<GridFunction>(*sum);
                const auto& add = std::get<GridFunction>(pre);
                if (!(add.domain() == acc.domain()))
                    throw ShapeError("incoming function pre-activations have different domains");
                const auto resampled = add.resample(acc.size());
                std::vector<double> vals = acc.values();
                for (std::size_t i = 0; i < vals.size(); ++i) vals[i] += resampled.values()[i];
                acc = GridFunction(acc.domain(), std::move(vals));
            }
        }
        if (!sum) continue;  // not reachable from the input
        const auto& g = node.activation;
        if (auto* v = std::get_if<Eigen::VectorXd>(&*sum)) {
            for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = g.g((*v)[i]);
        } else {
            auto& f = std::get<GridFunction>(*sum);
            std::vector<double> vals = f.values();
            for (auto& x : vals) x = g.g(x);
            f = GridFunction(f.domain(), std::move(vals));
        }
        values[n] = std::move(sum);
    }
    const auto out = s.output();
    if (!values[out]) throw ShapeError("output node is not reachable from the input node");
    return std::move(*values[out]);
}

nlohmann::json grid_to_json(const GridFunction& f) {
    return {{"domain", interval_to_json(f.domain())}, {"values", f.values()}};
}

GridFunction grid_from_json(const nlohmann::json& j) {
    try {
        return {interval_from_json(j.at("domain")), j.at("values").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed grid function: ") + e.what());
    }
}

nlohmann::json edge_to_json(const LayerEdge& e) {
    if (const auto* n = std::get_if<NDiscrete>(&e))
        return {{"type", "n"}, {"W", matrix_to_json(n->weights)}, {"bias", vector_to_json(n->bias)}};
    if (const auto* o = std::get_if<OOperational>(&e))
        return {{"type", "o"},
                {"kernel", kernel_to_json(o->kernel)},
                {"in_domain", interval_to_json(o->in_domain)},
                {"out_domain", interval_to_json(o->out_domain)},
                {"out_resolution", o->out_resolution},
                {"panels_per_segment", o->panels_per_segment}};
    auto fns = [](const std::vector<GridFunction>& ws) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& w : ws) arr.push_back(grid_to_json(w));
        return arr;
    };
    if (const auto* f = std::get_if<FFunctional>(&e))
        return {{"type", "f"}, {"weights", fns(f->weight_fns)}, {"bias", vector_to_json(f->bias)}};
    return {{"type", "d"}, {"weights", fns(std::get<DDefunctional>(e).weight_fns)}};
}

LayerEdge edge_from_json(const nlohmann::json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        auto fns = [](const nlohmann::json& arr) {
            std::vector<GridFunction> out;
            for (const auto& w : arr) out.push_back(grid_from_json(w));
            return out;
        };
        if (type == "n") return NDiscrete(matrix_from_json(j.at("W")), vector_from_json(j.at("bias")));
        if (type == "o")
            return OOperational{kernel_from_json(j.at("kernel")), interval_from_json(j.at("in_domain")),
                                interval_from_json(j.at("out_domain")), j.at("out_resolution").get<std::size_t>(),
                                j.value("panels_per_segment", kDefaultPanelsPerSegment)};
        if (type == "f") return FFunctional(fns(j.at("weights")), vector_from_json(j.at("bias")));
        if (type == "d") return DDefunctional(fns(j.at("weights")));
        throw FormatError("unknown edge type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed edge: ") + e.what());
    }
}

nlohmann::json skeleton_to_json(const Skeleton& s) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : s.nodes()) {
        nlohmann::json space;
        if (const auto* f = std::get_if<FiniteSpace>(&n.space)) {
            space = {{"kind", "finite"}, {"dim", f->dim}};
        } else {
            const auto& fs = std::get<FunctionSpace>(n.space);
            space = {{"kind", "function"}, {"domain", interval_to_json(fs.domain)}, {"resolution", fs.resolution}};
        }
        nodes.push_back({{"id", n.id}, {"space", std::move(space)}, {"activation", n.activation.tag()}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : s.edges())
        edges.push_back({{"from", s.nodes()[e.from].id}, {"to", s.nodes()[e.to].id}, {"op", edge_to_json(e.op)}});
    return {{"nodes", std::move(nodes)},
            {"edges", std::move(edges)},
            {"input", s.nodes()[s.input()].id},
            {"output", s.nodes()[s.output()].id}};
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
    try {
        Skeleton s;
        for (const auto& n : j.at("nodes")) {
            const auto& sp = n.at("space");
            const auto kind = sp.at("kind").get<std::string>();
            NodeSpace space = FiniteSpace{1};
            if (kind == "finite") {
                space = FiniteSpace{sp.at("dim").get<std::size_t>()};
            } else if (kind == "function") {
                space = FunctionSpace{interval_from_json(sp.at("domain")), sp.at("resolution").get<std::size_t>()};
            } else {
                throw FormatError("unknown node space kind '" + kind + "'");
            }
            s.add_node(n.at("id").get<std::string>(), std::move(space),
                       Activation::parse(n.value("activation", std::string("identity"))));
        }
        for (const auto& e : j.at("edges"))
            s.add_edge(s.node_index(e.at("from").get<std::string>()), s.node_index(e.at("to").get<std::string>()),
                       edge_from_json(e.at("op")));
        s.set_input(s.node_index(j.at("input").get<std::string>()));
        s.set_output(s.node_index(j.at("output").get<std::string>()));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed skeleton: ") + e.what());
    }
}

}  // namespace dfm
