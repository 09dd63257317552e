#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dfm/error.hpp"
#include "dfm/funcspace.hpp"
#include "dfm/kernels.hpp"
#include "dfm/layers.hpp"
#include "dfm/onn.hpp"
#include "json.hpp"

namespace dfm {

struct FunctionPair {
    GridFunction gamma;
    GridFunction delta;
};

struct DatasetMeta {
    std::string generator;
    std::uint64_t seed = 0;
    std::size_t resolution = 0;
    double sigma = 0.0;
};

struct FunctionDataset {
    std::vector<FunctionPair> pairs;
    DatasetMeta meta;

    // All inputs share a domain and all targets share a domain.
    void validate() const;
};

inline constexpr double kDefaultBumpSigma = 0.08;

// Inputs B_mu(u) = exp(-(u - mu)^2 / (2 sigma^2)) and targets
// B_mu(u)^2 + mu (u - mu) on [0, 1], mu ~ uniform(0, 1).
FunctionDataset gen_bump_dataset(std::size_t n, std::size_t resolution, double sigma, std::uint64_t seed);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// 80/20 by a seeded permutation of the indices.
Split split_dataset(std::size_t n, std::uint64_t seed);

struct TrainConfig {
    std::size_t epochs = 50;
    double learning_rate = 0.1;
    std::size_t batch_size = 10;
    std::uint64_t seed = 0;
    bool shuffle = true;
    std::size_t refinement = kDefaultOnnRefinement;

    void validate() const;
};

enum class BaselineKind { FullyConnected, Conv, Wave, PolyOnn };

BaselineKind parse_baseline_kind(const std::string& s);
std::string baseline_name(BaselineKind k);

// One discrete layer of a vector baseline.
//   fc:   W^T x + b
//   conv: zero-padded centered correlation with `taps`
//   wave: (1 / N) W^T x with W(i,j) = omega(i / N, j / N)
struct VectorLayer {
    BaselineKind kind;
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;
    std::vector<double> taps;
    WaveKernel wave;

    std::size_t parameter_count() const;
};

// Two-layer N -> N -> N network, tanh on the hidden node, identity output.
class VectorModel {
public:
    VectorModel(BaselineKind kind, std::size_t resolution, std::vector<VectorLayer> layers);

    BaselineKind kind() const { return kind_; }
    std::size_t resolution() const { return resolution_; }
    const std::vector<VectorLayer>& layers() const { return layers_; }
    std::vector<VectorLayer>& layers() { return layers_; }
    std::size_t parameter_count() const;

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    // The same network as an n-discrete skeleton.
    Skeleton to_skeleton() const;

private:
    BaselineKind kind_;
    std::size_t resolution_;
    std::vector<VectorLayer> layers_;
};

using Model = std::variant<PolyONN, VectorModel>;

struct BaselineHyper {
    std::size_t waves = 4;
    double wave_radius = std::numbers::pi;  // frequency shell radius of the last wave
    std::size_t filter_length = 7;
    std::size_t poly_degree = 4;  // Z_X = Z_Y = degree + 1
    std::string poly_activation = "tanh";
    double poly_init_scale = 0.1;
    std::size_t layers = 2;
    std::uint64_t init_seed = 0;
};

Model build_baseline(BaselineKind kind, std::size_t resolution, const BaselineHyper& hyper);

std::size_t parameter_count(const Model& m);

// 1/2 int (O(gamma) - delta)^2; vector models use the (1/N) Riemann sum.
double sample_loss(const Model& m, const FunctionPair& p);
double mean_loss(const Model& m, const FunctionDataset& ds, const std::vector<std::size_t>& idx);

// One SGD step on the batch mean loss; returns the batch mean loss before the step.
double train_batch(Model& m, const FunctionDataset& ds, const std::vector<std::size_t>& batch, double lr);

// Flat gradient of the batch mean loss for vector models, in parameter order
// (per layer: fc W row-major then b; conv taps; wave kernel parameters).
std::vector<double> vector_gradient(const VectorModel& m, const FunctionDataset& ds,
                                    const std::vector<std::size_t>& batch);
std::vector<double> vector_parameters(const VectorModel& m);
void set_vector_parameters(VectorModel& m, const std::vector<double>& params);

nlohmann::json model_to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);

struct TrainOptions {
    // Record the first iteration at which the full training loss drops to
    // `fraction` of its initial value.
    std::optional<double> threshold_fraction;
    bool record_timing = false;
};

struct TrainResult {
    std::vector<double> loss_history;  // batch mean loss, epochs x batches entries
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
    double final_test_loss = 0.0;
    std::optional<std::size_t> iterations_to_threshold;
    std::size_t iterations = 0;
    double wall_ms = 0.0;
};

class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, nlohmann::json state)
        : NumericError(what), model_state(std::move(state)) {}
    nlohmann::json model_state;
};

TrainResult train_loop(Model& m, const FunctionDataset& ds, const TrainConfig& cfg, const TrainOptions& opts = {});

struct RunRecord {
    std::string kind;
    std::size_t resolution = 0;
    std::uint64_t seed = 0;
    std::size_t params = 0;
    std::size_t waves = 0;
    std::optional<std::size_t> iterations_to_threshold;
    std::optional<double> normalized_iterations;
    double final_test_error = 0.0;
    std::optional<double> wall_ms;
    std::vector<double> loss_history;
};

struct ExperimentReport {
    std::vector<RunRecord> runs;
    nlohmann::json config;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

struct SweepSettings {
    TrainConfig train;
    BaselineHyper hyper;
    std::size_t dataset_size = 200;
    double sigma = kDefaultBumpSigma;
    std::uint64_t data_seed = 1;
    // Per-kind learning rates; kinds not listed use train.learning_rate.
    std::vector<std::pair<std::string, double>> learning_rates;
    double threshold_fraction = 0.25;
    bool record_timing = false;
    std::size_t threads = 1;

    double learning_rate_for(BaselineKind k) const;
    nlohmann::json to_json() const;
};

// Per (kind, resolution, repeat): parameter count, iterations to reach the
// threshold, iterations normalized by the same repeat at the smallest resolution.
ExperimentReport resolution_sweep(const std::vector<BaselineKind>& kinds, const std::vector<std::size_t>& resolutions,
                                  std::size_t repeats, const SweepSettings& settings);

// Wave model with b waves per layer, for each b and repeat; records final test error.
ExperimentReport param_sweep(const std::vector<std::size_t>& waves_per_layer, std::size_t resolution,
                             std::size_t repeats, const SweepSettings& settings);

nlohmann::json dataset_to_json(const FunctionDataset& ds);
FunctionDataset dataset_from_json(const nlohmann::json& j);

}  // namespace dfm
