#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfm/train.hpp"
#include "json.hpp"

namespace dfm {

inline constexpr const char* kToolVersion = "0.1.0";

enum class IdxType : std::uint8_t {
    UByte = 0x08,
    SByte = 0x09,
    Short = 0x0B,
    Int = 0x0C,
    Float = 0x0D,
    Double = 0x0E,
};

std::size_t idx_type_size(IdxType t);

struct IdxTensor {
    IdxType dtype = IdxType::UByte;
    std::vector<std::size_t> dims;
    // Row-major; unsigned bytes are scaled to [0, 1] (value / 255), other types kept as is.
    std::vector<double> data;

    std::size_t element_count() const;
    // The k-th slice along the first axis of a 3-D tensor as a matrix.
    Eigen::MatrixXd image(std::size_t k) const;
};

IdxTensor parse_idx(std::span<const std::uint8_t> bytes);
IdxTensor read_idx(const std::filesystem::path& path);

enum class RescaleMethod { Nearest, Bilinear };

RescaleMethod parse_rescale_method(const std::string& s);

// Resample on the unit square with pixel centers at (i + 1/2) / side.
Eigen::MatrixXd rescale_image(const Eigen::MatrixXd& img, std::size_t side, RescaleMethod method);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
// Write to a sibling temporary file then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// RFC 4180 field quoting.
std::string csv_quote(const std::string& field);

// Flat sidecar: u64 pair count, u64 resolution, then per pair gamma then delta
// values as little-endian doubles. Domains are [0, 1].
std::string dataset_to_binary(const FunctionDataset& ds);
FunctionDataset dataset_from_binary(std::span<const std::uint8_t> bytes, const DatasetMeta& meta);

struct DatasetSource {
    std::optional<std::string> path;
    std::size_t n = 200;
    std::size_t resolution = 100;
    double sigma = kDefaultBumpSigma;
    std::uint64_t seed = 0;
};

struct RunConfig {
    DatasetSource dataset;
    BaselineKind kind = BaselineKind::PolyOnn;
    BaselineHyper hyper;
    TrainConfig train;
    std::string checkpoint;
    std::optional<std::string> log;
};

// Strict: unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);

FunctionDataset load_dataset(const DatasetSource& src);

}  // namespace dfm
