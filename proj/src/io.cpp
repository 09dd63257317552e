#include "dfm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "dfm/error.hpp"

namespace dfm {

namespace {

std::string at_offset(const std::string& what, std::size_t offset) {
    std::ostringstream os;
    os << what << " at byte offset " << offset;
    return os.str();
}

std::uint64_t read_be(std::span<const std::uint8_t> b, std::size_t off, std::size_t width) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v = (v << 8) | b[off + i];
    return v;
}

double decode(IdxType t, std::span<const std::uint8_t> b, std::size_t off) {
    switch (t) {
        case IdxType::UByte: return static_cast<double>(b[off]) / 255.0;
        case IdxType::SByte: return static_cast<double>(static_cast<std::int8_t>(b[off]));
        case IdxType::Short: return static_cast<double>(static_cast<std::int16_t>(read_be(b, off, 2)));
        case IdxType::Int: return static_cast<double>(static_cast<std::int32_t>(read_be(b, off, 4)));
        case IdxType::Float: return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(read_be(b, off, 4))));
        case IdxType::Double: return std::bit_cast<double>(read_be(b, off, 8));
    }
    return 0.0;
}

void put_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off) {
    if (off + 8 > b.size()) throw FormatError(at_offset("truncated binary dataset", off));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[off + static_cast<std::size_t>(i)];
    return v;
}

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("wrong type for '") + key + "' in " + where);
    }
}

}  // namespace

std::size_t idx_type_size(IdxType t) {
    switch (t) {
        case IdxType::UByte:
        case IdxType::SByte: return 1;
        case IdxType::Short: return 2;
        case IdxType::Int:
        case IdxType::Float: return 4;
        case IdxType::Double: return 8;
    }
    return 0;
}

std::size_t IdxTensor::element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Eigen::MatrixXd IdxTensor::image(std::size_t k) const {
    if (dims.size() != 3) throw ShapeError("image slices need a 3-D tensor");
    if (k >= dims[0]) throw IndexError("image index out of range");
    const auto rows = static_cast<Eigen::Index>(dims[1]);
    const auto cols = static_cast<Eigen::Index>(dims[2]);
    Eigen::MatrixXd m(rows, cols);
    const std::size_t base = k * dims[1] * dims[2];
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[base + static_cast<std::size_t>(r * cols + c)];
    return m;
}

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError(at_offset("truncated IDX header", bytes.size()));
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError(at_offset("bad IDX magic", bytes[0] != 0 ? 0 : 1));
    const std::uint8_t code = bytes[2];
    IdxTensor t;
    switch (code) {
        case 0x08:
        case 0x09:
        case 0x0B:
        case 0x0C:
        case 0x0D:
        case 0x0E: t.dtype = static_cast<IdxType>(code); break;
        default: throw FormatError(at_offset("unknown IDX data type", 2));
    }
    const std::size_t ndims = bytes[3];
    if (ndims == 0) throw FormatError(at_offset("IDX tensor with zero dimensions", 3));
    std::size_t off = 4;
    for (std::size_t d = 0; d < ndims; ++d, off += 4) {
        if (off + 4 > bytes.size()) throw FormatError(at_offset("truncated IDX dimensions", bytes.size()));
        t.dims.push_back(static_cast<std::size_t>(read_be(bytes, off, 4)));
    }
    const std::size_t width = idx_type_size(t.dtype);
    const std::size_t count = t.element_count();
    const std::size_t expected = off + count * width;
    if (bytes.size() < expected) throw FormatError(at_offset("truncated IDX payload", bytes.size()));
    if (bytes.size() > expected) throw FormatError(at_offset("trailing bytes after IDX payload", expected));
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.data[i] = decode(t.dtype, bytes, off + i * width);
    return t;
}

IdxTensor read_idx(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    return parse_idx(bytes);
}

RescaleMethod parse_rescale_method(const std::string& s) {
    if (s == "nearest") return RescaleMethod::Nearest;
    if (s == "bilinear") return RescaleMethod::Bilinear;
    throw ConfigError("unknown rescale method '" + s + "' (expected nearest or bilinear)");
}

Eigen::MatrixXd rescale_image(const Eigen::MatrixXd& img, std::size_t side, RescaleMethod method) {
    if (side < 1) throw ShapeError("rescale side must be at least 1");
    if (img.rows() < 1 || img.cols() < 1) throw ShapeError("cannot rescale an empty image");
    const auto s = static_cast<Eigen::Index>(side);
    Eigen::MatrixXd out(s, s);
    const double rows = static_cast<double>(img.rows());
    const double cols = static_cast<double>(img.cols());
    for (Eigen::Index i = 0; i < s; ++i) {
        const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(side);
        for (Eigen::Index j = 0; j < s; ++j) {
            const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(side);
            double v;
            if (method == RescaleMethod::Nearest) {
                const auto r = std::min<Eigen::Index>(img.rows() - 1, static_cast<Eigen::Index>(std::floor(t * rows)));
                const auto c = std::min<Eigen::Index>(img.cols() - 1, static_cast<Eigen::Index>(std::floor(u * cols)));
                v = img(r, c);
            } else {
                const double y = std::clamp(t * rows - 0.5, 0.0, rows - 1.0);
                const double x = std::clamp(u * cols - 0.5, 0.0, cols - 1.0);
                const auto r0 = static_cast<Eigen::Index>(std::floor(y));
                const auto c0 = static_cast<Eigen::Index>(std::floor(x));
                const auto r1 = std::min<Eigen::Index>(r0 + 1, img.rows() - 1);
                const auto c1 = std::min<Eigen::Index>(c0 + 1, img.cols() - 1);
                const double fy = y - static_cast<double>(r0);
                const double fx = x - static_cast<double>(c0);
                v = (1 - fy) * ((1 - fx) * img(r0, c0) + fx * img(r0, c1)) + fy * ((1 - fx) * img(r1, c0) + fx * img(r1, c1));
            }
            out(i, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw FormatError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw FormatError("cannot rename onto " + path.string());
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file_atomic(path, j.dump(1) + "\n");
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string dataset_to_binary(const FunctionDataset& ds) {
    ds.validate();
    const std::size_t n = ds.pairs.front().gamma.size();
    std::string out;
    put_le(out, ds.pairs.size());
    put_le(out, n);
    for (const auto& p : ds.pairs) {
        if (p.gamma.size() != n || p.delta.size() != n) throw ShapeError("binary datasets need one resolution");
        for (double v : p.gamma.values()) put_le(out, std::bit_cast<std::uint64_t>(v));
        for (double v : p.delta.values()) put_le(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

FunctionDataset dataset_from_binary(std::span<const std::uint8_t> bytes, const DatasetMeta& meta) {
    const auto count = get_le(bytes, 0);
    const auto n = get_le(bytes, 8);
    if (n < 2) throw FormatError(at_offset("binary dataset resolution below 2", 8));
    const std::size_t expected = 16 + count * n * 2 * 8;
    if (bytes.size() != expected) throw FormatError(at_offset("binary dataset length mismatch", std::min(bytes.size(), expected)));
    FunctionDataset ds;
    ds.meta = meta;
    std::size_t off = 16;
    const Interval unit(0.0, 1.0);
    auto read_fn = [&] {
        std::vector<double> v(n);
        for (auto& x : v) {
            x = std::bit_cast<double>(get_le(bytes, off));
            off += 8;
        }
        return GridFunction(unit, std::move(v));
    };
    for (std::uint64_t i = 0; i < count; ++i) {
        auto g = read_fn();
        auto d = read_fn();
        ds.pairs.push_back({std::move(g), std::move(d)});
    }
    return ds;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    check_keys(j, "config", {"dataset", "model", "train", "output"});
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, "dataset", {"path", "n", "resolution", "sigma", "seed"});
        if (d.contains("path")) {
            std::string p;
            read_opt(d, "path", p, "dataset");
            c.dataset.path = p;
        }
        read_opt(d, "n", c.dataset.n, "dataset");
        read_opt(d, "resolution", c.dataset.resolution, "dataset");
        read_opt(d, "sigma", c.dataset.sigma, "dataset");
        read_opt(d, "seed", c.dataset.seed, "dataset");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, "model",
                   {"kind", "waves", "wave_radius", "filter_length", "poly_degree", "poly_activation", "poly_init_scale", "layers",
                    "init_seed"});
        std::string kind = baseline_name(c.kind);
        read_opt(m, "kind", kind, "model");
        c.kind = parse_baseline_kind(kind);
        read_opt(m, "waves", c.hyper.waves, "model");
        read_opt(m, "wave_radius", c.hyper.wave_radius, "model");
        read_opt(m, "filter_length", c.hyper.filter_length, "model");
        read_opt(m, "poly_degree", c.hyper.poly_degree, "model");
        read_opt(m, "poly_activation", c.hyper.poly_activation, "model");
        read_opt(m, "poly_init_scale", c.hyper.poly_init_scale, "model");
        read_opt(m, "layers", c.hyper.layers, "model");
        read_opt(m, "init_seed", c.hyper.init_seed, "model");
        Activation::parse(c.hyper.poly_activation);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train", {"epochs", "learning_rate", "batch_size", "seed", "shuffle", "refinement"});
        read_opt(t, "epochs", c.train.epochs, "train");
        read_opt(t, "learning_rate", c.train.learning_rate, "train");
        read_opt(t, "batch_size", c.train.batch_size, "train");
        read_opt(t, "seed", c.train.seed, "train");
        read_opt(t, "shuffle", c.train.shuffle, "train");
        read_opt(t, "refinement", c.train.refinement, "train");
    }
    if (!j.contains("output")) throw ConfigError("config needs an output section with a checkpoint path");
    const auto& o = j.at("output");
    check_keys(o, "output", {"checkpoint", "log"});
    if (!o.contains("checkpoint")) throw ConfigError("output.checkpoint is required");
    read_opt(o, "checkpoint", c.checkpoint, "output");
    if (o.contains("log")) {
        std::string l;
        read_opt(o, "log", l, "output");
        c.log = l;
    }
    c.train.validate();
    return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json ds = {{"n", c.dataset.n},
                         {"resolution", c.dataset.resolution},
                         {"sigma", c.dataset.sigma},
                         {"seed", c.dataset.seed}};
    if (c.dataset.path) ds["path"] = *c.dataset.path;
    nlohmann::json out = {{"checkpoint", c.checkpoint}};
    if (c.log) out["log"] = *c.log;
    return {{"dataset", std::move(ds)},
            {"model",
             {{"kind", baseline_name(c.kind)},
              {"waves", c.hyper.waves},
              {"wave_radius", c.hyper.wave_radius},
              {"filter_length", c.hyper.filter_length},
              {"poly_degree", c.hyper.poly_degree},
              {"poly_activation", c.hyper.poly_activation},
              {"poly_init_scale", c.hyper.poly_init_scale},
              {"layers", c.hyper.layers},
              {"init_seed", c.hyper.init_seed}}},
            {"train",
             {{"epochs", c.train.epochs},
              {"learning_rate", c.train.learning_rate},
              {"batch_size", c.train.batch_size},
              {"seed", c.train.seed},
              {"shuffle", c.train.shuffle},
              {"refinement", c.train.refinement}}},
            {"output", std::move(out)}};
}

FunctionDataset load_dataset(const DatasetSource& src) {
    if (!src.path) return gen_bump_dataset(src.n, src.resolution, src.sigma, src.seed);
    const auto j = read_json_file(*src.path);
    return dataset_from_json(j.contains("dataset") ? j.at("dataset") : j);
}

}  // namespace dfm
