#include "dfm/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "dfm/discretize.hpp"
#include "dfm/random.hpp"

namespace dfm {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;

Eigen::VectorXd to_vector(const GridFunction& f) {
    return Eigen::Map<const Eigen::VectorXd>(f.values().data(), static_cast<Eigen::Index>(f.size()));
}

// Effective matrix of a vector layer: pre-activation = W_eff^T x + bias.
Eigen::MatrixXd effective_weights(const VectorLayer& l, std::size_t n) {
    switch (l.kind) {
        case BaselineKind::FullyConnected: return l.weights;
        case BaselineKind::Conv: return conv_equivalence(l.taps, n).weights;
        case BaselineKind::Wave: return sample_instantiate(l.wave, n, n).weights / static_cast<double>(n);
        case BaselineKind::PolyOnn: break;
    }
    throw ConfigError("poly-onn is not a vector layer kind");
}

bool has_bias(const VectorLayer& l) { return l.kind == BaselineKind::FullyConnected; }

struct VectorPass {
    std::vector<Eigen::VectorXd> inputs;  // input to each layer
    Eigen::VectorXd output;
};

VectorPass vector_forward(const VectorModel& m, const std::vector<Eigen::MatrixXd>& weights, const Eigen::VectorXd& x) {
    VectorPass pass;
    Eigen::VectorXd y = x;
    const auto& layers = m.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        pass.inputs.push_back(y);
        Eigen::VectorXd pre = weights[l].transpose() * y;
        if (has_bias(layers[l])) pre += layers[l].bias;
        if (l + 1 < layers.size()) {
            y = pre.array().tanh().matrix();
        } else {
            y = std::move(pre);
        }
    }
    pass.output = std::move(y);
    return pass;
}

double vector_sample_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& target) {
    return 0.5 * (y - target).squaredNorm() / static_cast<double>(y.size());
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

void check_model_fits(const Model& m, const FunctionDataset& ds) {
    const auto& p = ds.pairs.front();
    if (const auto* onn = std::get_if<PolyONN>(&m)) {
        if (!(p.gamma.domain() == onn->layers().front().domain) || !(p.delta.domain() == onn->output_domain()))
            throw ShapeError("model domains do not match the dataset domains");
        return;
    }
    const auto& vm = std::get<VectorModel>(m);
    if (p.gamma.size() != vm.resolution() || p.delta.size() != vm.resolution())
        throw ShapeError("model resolution does not match the dataset resolution");
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

template <class Job>
void run_parallel(std::size_t count, std::size_t threads, Job&& job) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                job(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

void FunctionDataset::validate() const {
    if (pairs.empty()) throw ShapeError("dataset is empty");
    for (const auto& p : pairs) {
        if (!(p.gamma.domain() == pairs.front().gamma.domain()))
            throw ShapeError("dataset inputs do not share a domain");
        if (!(p.delta.domain() == pairs.front().delta.domain()))
            throw ShapeError("dataset targets do not share a domain");
    }
}

FunctionDataset gen_bump_dataset(std::size_t n, std::size_t resolution, double sigma, std::uint64_t seed) {
    if (n < 1) throw ConfigError("dataset size must be at least 1");
    if (resolution < 2) throw ConfigError("resolution must be at least 2");
    if (!(sigma > 0.0)) throw ConfigError("bump width must be positive");
    Rng rng(seed);
    const Interval unit(0.0, 1.0);
    FunctionDataset ds;
    ds.meta = {"gaussian-bump", seed, resolution, sigma};
    ds.pairs.reserve(n);
    const double denom = 2.0 * sigma * sigma;
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = uniform01(rng);
        auto bump = [=](double u) { return std::exp(-(u - mu) * (u - mu) / denom); };
        ds.pairs.push_back({GridFunction::sample(unit, resolution, bump),
                            GridFunction::sample(unit, resolution, [&](double u) {
                                const double b = bump(u);
                                return b * b + mu * (u - mu);
                            })});
    }
    return ds;
}

Split split_dataset(std::size_t n, std::uint64_t seed) {
    auto perm = all_indices(n);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    const std::size_t n_test = n >= 2 ? std::max<std::size_t>(1, n / 5) : 0;
    Split s;
    s.train.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
    s.test.assign(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw ConfigError("learning rate must be finite and nonnegative");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (refinement < 1) throw ConfigError("quadrature refinement must be positive");
}

BaselineKind parse_baseline_kind(const std::string& s) {
    if (s == "fc") return BaselineKind::FullyConnected;
    if (s == "conv") return BaselineKind::Conv;
    if (s == "wave") return BaselineKind::Wave;
    if (s == "poly-onn") return BaselineKind::PolyOnn;
    throw ConfigError("unknown model kind '" + s + "'");
}

std::string baseline_name(BaselineKind k) {
    switch (k) {
        case BaselineKind::FullyConnected: return "fc";
        case BaselineKind::Conv: return "conv";
        case BaselineKind::Wave: return "wave";
        case BaselineKind::PolyOnn: return "poly-onn";
    }
    return "fc";
}

std::size_t VectorLayer::parameter_count() const {
    switch (kind) {
        case BaselineKind::FullyConnected: return static_cast<std::size_t>(weights.size() + bias.size());
        case BaselineKind::Conv: return taps.size();
        case BaselineKind::Wave: return wave.parameter_count();
        case BaselineKind::PolyOnn: break;
    }
    return 0;
}

VectorModel::VectorModel(BaselineKind kind, std::size_t resolution, std::vector<VectorLayer> layers)
    : kind_(kind), resolution_(resolution), layers_(std::move(layers)) {
    if (kind_ == BaselineKind::PolyOnn) throw ConfigError("poly-onn is not a vector model");
    if (resolution_ < 2) throw ConfigError("resolution must be at least 2");
    if (layers_.empty()) throw ConfigError("vector model needs at least one layer");
    const auto n = static_cast<Eigen::Index>(resolution_);
    for (const auto& l : layers_) {
        if (l.kind != kind_) throw ConfigError("vector model layers must share the model kind");
        if (l.kind == BaselineKind::FullyConnected && (l.weights.rows() != n || l.weights.cols() != n || l.bias.size() != n))
            throw ShapeError("fc layer must be N x N with N biases");
        if (l.kind == BaselineKind::Conv && (l.taps.empty() || l.taps.size() % 2 == 0 || l.taps.size() > resolution_))
            throw ShapeError("conv layer needs an odd filter no longer than the signal");
    }
}

std::size_t VectorModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
}

Eigen::VectorXd VectorModel::forward(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != resolution_) throw ShapeError("input length differs from the model resolution");
    std::vector<Eigen::MatrixXd> weights;
    for (const auto& l : layers_) weights.push_back(effective_weights(l, resolution_));
    return vector_forward(*this, weights, x).output;
}

Skeleton VectorModel::to_skeleton() const {
    Skeleton s;
    const auto n = static_cast<Eigen::Index>(resolution_);
    std::size_t prev = s.add_node("in", FiniteSpace{resolution_});
    s.set_input(prev);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const bool last = l + 1 == layers_.size();
        const auto node = s.add_node(last ? "out" : "h" + std::to_string(l + 1), FiniteSpace{resolution_},
                                     Activation(last ? ActivationKind::Identity : ActivationKind::Tanh));
        Eigen::VectorXd bias = has_bias(layers_[l]) ? layers_[l].bias : Eigen::VectorXd::Zero(n);
        s.add_edge(prev, node, NDiscrete(effective_weights(layers_[l], resolution_), std::move(bias)));
        prev = node;
    }
    s.set_output(prev);
    return s;
}

Model build_baseline(BaselineKind kind, std::size_t resolution, const BaselineHyper& hyper) {
    if (resolution < 2) throw ConfigError("resolution must be at least 2");
    if (hyper.layers < 1) throw ConfigError("baseline needs at least one layer");
    Rng rng(hyper.init_seed);
    if (kind == BaselineKind::PolyOnn) {
        const std::size_t z = hyper.poly_degree + 1;
        std::vector<std::pair<std::size_t, std::size_t>> degrees(hyper.layers, {z, z});
        return random_poly_onn(degrees, Activation::parse(hyper.poly_activation), hyper.poly_init_scale, rng);
    }
    const auto n = static_cast<Eigen::Index>(resolution);
    std::vector<VectorLayer> layers;
    for (std::size_t l = 0; l < hyper.layers; ++l) {
        VectorLayer layer{kind, {}, {}, {}, WaveKernel{}};
        if (kind == BaselineKind::FullyConnected) {
            const double a = 1.0 / std::sqrt(static_cast<double>(resolution));
            layer.weights.resize(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) layer.weights(i, j) = uniform(rng, -a, a);
            layer.bias = Eigen::VectorXd::Zero(n);
        } else if (kind == BaselineKind::Conv) {
            if (hyper.filter_length % 2 == 0 || hyper.filter_length > resolution)
                throw ConfigError("conv filter length must be odd and no longer than the resolution");
            const double a = 1.0 / std::sqrt(static_cast<double>(hyper.filter_length));
            layer.taps.resize(hyper.filter_length);
            for (auto& t : layer.taps) t = uniform(rng, -a, a);
        } else {
            layer.wave = init_wave_kernel(hyper.waves, rng, 1, hyper.wave_radius);
        }
        layers.push_back(std::move(layer));
    }
    return VectorModel(kind, resolution, std::move(layers));
}

std::size_t parameter_count(const Model& m) {
    return std::visit([](const auto& x) { return x.parameter_count(); }, m);
}

double sample_loss(const Model& m, const FunctionPair& p) {
    if (const auto* onn = std::get_if<PolyONN>(&m)) return loss(*onn, p.gamma, p.delta);
    const auto& vm = std::get<VectorModel>(m);
    return vector_sample_loss(vm.forward(to_vector(p.gamma)), to_vector(p.delta));
}

double mean_loss(const Model& m, const FunctionDataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    if (const auto* vm = std::get_if<VectorModel>(&m)) {
        std::vector<Eigen::MatrixXd> weights;
        for (const auto& l : vm->layers()) weights.push_back(effective_weights(l, vm->resolution()));
        for (auto i : idx)
            acc += vector_sample_loss(vector_forward(*vm, weights, to_vector(ds.pairs[i].gamma)).output,
                                      to_vector(ds.pairs[i].delta));
    } else {
        for (auto i : idx) acc += sample_loss(m, ds.pairs[i]);
    }
    return acc / static_cast<double>(idx.size());
}

std::vector<double> vector_parameters(const VectorModel& m) {
    std::vector<double> out;
    for (const auto& l : m.layers()) {
        switch (l.kind) {
            case BaselineKind::FullyConnected:
                for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
                    for (Eigen::Index j = 0; j < l.weights.cols(); ++j) out.push_back(l.weights(i, j));
                out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
                break;
            case BaselineKind::Conv: out.insert(out.end(), l.taps.begin(), l.taps.end()); break;
            case BaselineKind::Wave: {
                const auto p = l.wave.parameters();
                out.insert(out.end(), p.begin(), p.end());
                break;
            }
            case BaselineKind::PolyOnn: break;
        }
    }
    return out;
}

void set_vector_parameters(VectorModel& m, const std::vector<double>& params) {
    if (params.size() != m.parameter_count()) throw ShapeError("parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto& l : m.layers()) {
        switch (l.kind) {
            case BaselineKind::FullyConnected:
                for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
                    for (Eigen::Index j = 0; j < l.weights.cols(); ++j) l.weights(i, j) = params[k++];
                for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = params[k++];
                break;
            case BaselineKind::Conv:
                for (auto& t : l.taps) t = params[k++];
                break;
            case BaselineKind::Wave: {
                const auto count = l.wave.parameter_count();
                l.wave.set_parameters(std::span<const double>(params.data() + k, count));
                k += count;
                break;
            }
            case BaselineKind::PolyOnn: break;
        }
    }
}

std::vector<double> vector_gradient(const VectorModel& m, const FunctionDataset& ds,
                                    const std::vector<std::size_t>& batch) {
    const std::size_t n = m.resolution();
    const auto ni = static_cast<Eigen::Index>(n);
    const auto& layers = m.layers();
    std::vector<Eigen::MatrixXd> weights;
    for (const auto& l : layers) weights.push_back(effective_weights(l, n));

    // Per layer: G = sum over the batch of x dy^T (gradient w.r.t. W_eff) and
    // the bias gradient.
    std::vector<Eigen::MatrixXd> outer(layers.size(), Eigen::MatrixXd::Zero(ni, ni));
    std::vector<Eigen::VectorXd> dbias(layers.size(), Eigen::VectorXd::Zero(ni));
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto idx : batch) {
        const auto pass = vector_forward(m, weights, to_vector(ds.pairs[idx].gamma));
        Eigen::VectorXd dy = (pass.output - to_vector(ds.pairs[idx].delta)) * (scale / static_cast<double>(n));
        for (std::size_t l = layers.size(); l-- > 0;) {
            outer[l].noalias() += pass.inputs[l] * dy.transpose();
            dbias[l] += dy;
            if (l == 0) break;
            Eigen::VectorXd dh = weights[l] * dy;
            const auto& h = pass.inputs[l];
            dy = (dh.array() * (1.0 - h.array().square())).matrix();
        }
    }

    std::vector<double> grad;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const auto& g = outer[l];
        switch (layer.kind) {
            case BaselineKind::FullyConnected:
                for (Eigen::Index i = 0; i < ni; ++i)
                    for (Eigen::Index j = 0; j < ni; ++j) grad.push_back(g(i, j));
                grad.insert(grad.end(), dbias[l].data(), dbias[l].data() + ni);
                break;
            case BaselineKind::Conv: {
                // W(i,j) = taps[i - j + r]
                const auto r = static_cast<Eigen::Index>((layer.taps.size() - 1) / 2);
                std::vector<double> dt(layer.taps.size(), 0.0);
                for (Eigen::Index i = 0; i < ni; ++i)
                    for (Eigen::Index j = 0; j < ni; ++j) {
                        const Eigen::Index k = i - j + r;
                        if (k >= 0 && k < static_cast<Eigen::Index>(dt.size())) dt[static_cast<std::size_t>(k)] += g(i, j);
                    }
                grad.insert(grad.end(), dt.begin(), dt.end());
                break;
            }
            case BaselineKind::Wave: {
                const auto count = layer.wave.parameter_count();
                std::vector<double> dp(count, 0.0);
                std::vector<double> dw(count);
                const double inv = 1.0 / static_cast<double>(n);
                for (Eigen::Index i = 0; i < ni; ++i)
                    for (Eigen::Index j = 0; j < ni; ++j) {
                        layer.wave.parameter_gradient(static_cast<double>(i + 1) * inv, static_cast<double>(j + 1) * inv, dw);
                        const double gij = g(i, j) * inv;
                        for (std::size_t p = 0; p < count; ++p) dp[p] += gij * dw[p];
                    }
                grad.insert(grad.end(), dp.begin(), dp.end());
                break;
            }
            case BaselineKind::PolyOnn: break;
        }
    }
    return grad;
}

double train_batch(Model& m, const FunctionDataset& ds, const std::vector<std::size_t>& batch, double lr) {
    if (batch.empty()) throw ShapeError("empty batch");
    if (auto* onn = std::get_if<PolyONN>(&m)) {
        auto total = zero_gradients(*onn);
        double acc = 0.0;
        const double scale = 1.0 / static_cast<double>(batch.size());
        for (auto i : batch) {
            const auto& p = ds.pairs[i];
            const auto fwd = forward(*onn, p.gamma);
            acc += loss_from_tape(*onn, fwd.tape, p.delta);
            accumulate(total, backward(*onn, fwd.tape, p.gamma, p.delta), scale);
        }
        sgd_step(*onn, total, lr);
        return acc * scale;
    }
    auto& vm = std::get<VectorModel>(m);
    const double before = mean_loss(m, ds, batch);
    const auto grad = vector_gradient(vm, ds, batch);
    auto params = vector_parameters(vm);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    set_vector_parameters(vm, params);
    return before;
}

nlohmann::json model_to_json(const Model& m) {
    if (const auto* onn = std::get_if<PolyONN>(&m)) return {{"kind", "poly-onn"}, {"onn", onn_to_json(*onn)}};
    const auto& vm = std::get<VectorModel>(m);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : vm.layers()) {
        switch (l.kind) {
            case BaselineKind::FullyConnected: {
                nlohmann::json rows = nlohmann::json::array();
                for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
                    std::vector<double> row(static_cast<std::size_t>(l.weights.cols()));
                    for (Eigen::Index j = 0; j < l.weights.cols(); ++j) row[static_cast<std::size_t>(j)] = l.weights(i, j);
                    rows.push_back(row);
                }
                layers.push_back({{"W", std::move(rows)},
                                  {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
                break;
            }
            case BaselineKind::Conv: layers.push_back({{"taps", l.taps}}); break;
            case BaselineKind::Wave: layers.push_back({{"kernel", kernel_to_json(l.wave)}}); break;
            case BaselineKind::PolyOnn: break;
        }
    }
    return {{"kind", baseline_name(vm.kind())}, {"resolution", vm.resolution()}, {"layers", std::move(layers)}};
}

Model model_from_json(const nlohmann::json& j) {
    try {
        const auto kind = parse_baseline_kind(j.at("kind").get<std::string>());
        if (kind == BaselineKind::PolyOnn) return onn_from_json(j.at("onn"));
        const auto n = j.at("resolution").get<std::size_t>();
        std::vector<VectorLayer> layers;
        for (const auto& lj : j.at("layers")) {
            VectorLayer l{kind, {}, {}, {}, WaveKernel{}};
            if (kind == BaselineKind::FullyConnected) {
                const auto& rows = lj.at("W");
                l.weights.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    const auto row = rows[r].get<std::vector<double>>();
                    if (row.size() != rows.size()) throw FormatError("fc weight matrix must be square");
                    for (std::size_t c = 0; c < row.size(); ++c)
                        l.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
                }
                const auto b = lj.at("bias").get<std::vector<double>>();
                l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
            } else if (kind == BaselineKind::Conv) {
                l.taps = lj.at("taps").get<std::vector<double>>();
            } else {
                l.wave = std::get<WaveKernel>(kernel_from_json(lj.at("kernel")));
            }
            layers.push_back(std::move(l));
        }
        return VectorModel(kind, n, std::move(layers));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed model: ") + e.what());
    }
}

TrainResult train_loop(Model& m, const FunctionDataset& ds, const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    ds.validate();
    check_model_fits(m, ds);
    const auto start = std::chrono::steady_clock::now();
    const auto split = split_dataset(ds.pairs.size(), cfg.seed);

    TrainResult res;
    res.initial_train_loss = mean_loss(m, ds, split.train);
    const bool track = opts.threshold_fraction.has_value();
    const double threshold = track ? *opts.threshold_fraction * res.initial_train_loss : 0.0;

    Rng rng(cfg.seed ^ kShuffleSalt);
    auto order = split.train;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle)
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
            const double l = train_batch(m, ds, batch, cfg.learning_rate);
            if (!std::isfinite(l)) {
                std::ostringstream os;
                os << "training diverged: non-finite loss at epoch " << epoch << ", iteration " << res.iterations;
                throw TrainingDiverged(os.str(), model_to_json(m));
            }
            res.loss_history.push_back(l);
            ++res.iterations;
            if (track && !res.iterations_to_threshold && mean_loss(m, ds, split.train) <= threshold)
                res.iterations_to_threshold = res.iterations;
        }
    }
    res.final_train_loss = mean_loss(m, ds, split.train);
    if (!std::isfinite(res.final_train_loss))
        throw TrainingDiverged("training diverged: non-finite final loss", model_to_json(m));
    res.final_test_loss = mean_loss(m, ds, split.test);
    if (opts.record_timing)
        res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return res;
}

std::string ExperimentReport::to_csv() const {
    std::ostringstream os;
    os << "kind,resolution,seed,params,iterations_to_threshold,normalized_iterations,final_test_error,wall_ms\r\n";
    for (const auto& r : runs) {
        os << csv_field(r.kind) << ',' << r.resolution << ',' << r.seed << ',' << r.params << ',';
        if (r.iterations_to_threshold) os << *r.iterations_to_threshold;
        os << ',';
        if (r.normalized_iterations) os << format_double(*r.normalized_iterations);
        os << ',' << format_double(r.final_test_error) << ',';
        if (r.wall_ms) os << format_double(*r.wall_ms);
        os << "\r\n";
    }
    return os.str();
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json runs_j = nlohmann::json::array();
    auto opt = [](const auto& o) -> nlohmann::json { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
    for (const auto& r : runs)
        runs_j.push_back({{"kind", r.kind},
                          {"resolution", r.resolution},
                          {"seed", r.seed},
                          {"params", r.params},
                          {"waves", r.waves},
                          {"iterations_to_threshold", opt(r.iterations_to_threshold)},
                          {"normalized_iterations", opt(r.normalized_iterations)},
                          {"final_test_error", std::isfinite(r.final_test_error) ? nlohmann::json(r.final_test_error)
                                                                                 : nlohmann::json(nullptr)},
                          {"wall_ms", opt(r.wall_ms)},
                          {"loss_history", r.loss_history}});
    return {{"config", config}, {"runs", std::move(runs_j)}};
}

double SweepSettings::learning_rate_for(BaselineKind k) const {
    const auto name = baseline_name(k);
    for (const auto& [kind, lr] : learning_rates)
        if (kind == name) return lr;
    return train.learning_rate;
}

nlohmann::json SweepSettings::to_json() const {
    nlohmann::json lrs = nlohmann::json::object();
    for (const auto& [k, v] : learning_rates) lrs[k] = v;
    return {{"train",
             {{"epochs", train.epochs},
              {"learning_rate", train.learning_rate},
              {"batch_size", train.batch_size},
              {"seed", train.seed},
              {"shuffle", train.shuffle},
              {"refinement", train.refinement}}},
            {"hyper",
             {{"waves", hyper.waves},
              {"wave_radius", hyper.wave_radius},
              {"filter_length", hyper.filter_length},
              {"poly_degree", hyper.poly_degree},
              {"poly_activation", hyper.poly_activation},
              {"poly_init_scale", hyper.poly_init_scale},
              {"layers", hyper.layers},
              {"init_seed", hyper.init_seed}}},
            {"dataset_size", dataset_size},
            {"sigma", sigma},
            {"data_seed", data_seed},
            {"learning_rates", std::move(lrs)},
            {"threshold_fraction", threshold_fraction}};
}

ExperimentReport resolution_sweep(const std::vector<BaselineKind>& kinds, const std::vector<std::size_t>& resolutions,
                                  std::size_t repeats, const SweepSettings& settings) {
    if (kinds.empty()) throw ConfigError("resolution sweep needs at least one kind");
    if (resolutions.empty() || !std::is_sorted(resolutions.begin(), resolutions.end()))
        throw ConfigError("resolutions must be nonempty and ascending");
    if (repeats < 2) throw ConfigError("resolution sweep needs at least two repeats");

    struct Job {
        BaselineKind kind;
        std::size_t resolution;
        std::size_t repeat;
    };
    std::vector<Job> jobs;
    for (auto k : kinds)
        for (auto res : resolutions)
            for (std::size_t r = 0; r < repeats; ++r) jobs.push_back({k, res, r});

    ExperimentReport report;
    report.config = settings.to_json();
    report.config["kinds"] = nlohmann::json::array();
    for (auto k : kinds) report.config["kinds"].push_back(baseline_name(k));
    report.config["resolutions"] = resolutions;
    report.config["repeats"] = repeats;
    report.runs.resize(jobs.size());

    run_parallel(jobs.size(), settings.threads, [&](std::size_t i) {
        const auto& job = jobs[i];
        const auto ds = gen_bump_dataset(settings.dataset_size, job.resolution, settings.sigma,
                                         settings.data_seed + job.repeat);
        auto hyper = settings.hyper;
        hyper.init_seed = settings.hyper.init_seed + job.repeat;
        auto model = build_baseline(job.kind, job.resolution, hyper);
        auto cfg = settings.train;
        cfg.seed = settings.train.seed + job.repeat;
        cfg.learning_rate = settings.learning_rate_for(job.kind);
        const auto res = train_loop(model, ds, cfg, {settings.threshold_fraction, settings.record_timing});
        auto& rec = report.runs[i];
        rec.kind = baseline_name(job.kind);
        rec.resolution = job.resolution;
        rec.seed = cfg.seed;
        rec.params = parameter_count(model);
        rec.waves = job.kind == BaselineKind::Wave ? hyper.waves : 0;
        rec.iterations_to_threshold = res.iterations_to_threshold;
        rec.final_test_error = res.final_test_loss;
        if (settings.record_timing) rec.wall_ms = res.wall_ms;
        rec.loss_history = res.loss_history;
    });

    // Normalize by the same kind and seed at the smallest resolution.
    std::map<std::pair<std::string, std::uint64_t>, std::optional<std::size_t>> base;
    for (const auto& r : report.runs)
        if (r.resolution == resolutions.front()) base[{r.kind, r.seed}] = r.iterations_to_threshold;
    for (auto& r : report.runs) {
        const auto& b = base[{r.kind, r.seed}];
        if (r.iterations_to_threshold && b && *b > 0)
            r.normalized_iterations = static_cast<double>(*r.iterations_to_threshold) / static_cast<double>(*b);
    }
    return report;
}

ExperimentReport param_sweep(const std::vector<std::size_t>& waves_per_layer, std::size_t resolution,
                             std::size_t repeats, const SweepSettings& settings) {
    if (waves_per_layer.empty() || !std::is_sorted(waves_per_layer.begin(), waves_per_layer.end()))
        throw ConfigError("waves per layer must be nonempty and ascending");
    if (repeats < 1) throw ConfigError("parameter sweep needs at least one repeat");

    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (auto b : waves_per_layer)
        for (std::size_t r = 0; r < repeats; ++r) jobs.emplace_back(b, r);

    ExperimentReport report;
    report.config = settings.to_json();
    report.config["waves_per_layer"] = waves_per_layer;
    report.config["resolution"] = resolution;
    report.config["repeats"] = repeats;
    report.runs.resize(jobs.size());

    run_parallel(jobs.size(), settings.threads, [&](std::size_t i) {
        const auto [b, r] = jobs[i];
        const auto ds = gen_bump_dataset(settings.dataset_size, resolution, settings.sigma, settings.data_seed + r);
        auto hyper = settings.hyper;
        hyper.waves = b;
        hyper.init_seed = settings.hyper.init_seed + r;
        auto model = build_baseline(BaselineKind::Wave, resolution, hyper);
        auto cfg = settings.train;
        cfg.seed = settings.train.seed + r;
        cfg.learning_rate = settings.learning_rate_for(BaselineKind::Wave);
        const auto res = train_loop(model, ds, cfg, {std::nullopt, settings.record_timing});
        auto& rec = report.runs[i];
        rec.kind = "wave";
        rec.resolution = resolution;
        rec.seed = cfg.seed;
        rec.params = parameter_count(model);
        rec.waves = b;
        rec.final_test_error = res.final_test_loss;
        if (settings.record_timing) rec.wall_ms = res.wall_ms;
        rec.loss_history = res.loss_history;
    });
    return report;
}

nlohmann::json dataset_to_json(const FunctionDataset& ds) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : ds.pairs) pairs.push_back({{"gamma", grid_to_json(p.gamma)}, {"delta", grid_to_json(p.delta)}});
    return {{"meta",
             {{"generator", ds.meta.generator},
              {"seed", ds.meta.seed},
              {"resolution", ds.meta.resolution},
              {"sigma", ds.meta.sigma}}},
            {"pairs", std::move(pairs)}};
}

FunctionDataset dataset_from_json(const nlohmann::json& j) {
    try {
        FunctionDataset ds;
        const auto& meta = j.at("meta");
        ds.meta = {meta.at("generator").get<std::string>(), meta.at("seed").get<std::uint64_t>(),
                   meta.at("resolution").get<std::size_t>(), meta.at("sigma").get<double>()};
        for (const auto& p : j.at("pairs")) ds.pairs.push_back({grid_from_json(p.at("gamma")), grid_from_json(p.at("delta"))});
        ds.validate();
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset: ") + e.what());
    }
}

}  // namespace dfm
