#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dfm/discretize.hpp"
#include "dfm/error.hpp"
#include "dfm/io.hpp"
#include "dfm/kernels.hpp"
#include "dfm/train.hpp"

using nlohmann::json;

namespace {

struct UsageError : dfm::Error {
    using dfm::Error::Error;
};

std::string fmt17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json provenance(const std::string& command, const json& config, const json& seed) {
    return {{"tool_version", dfm::kToolVersion}, {"command", command}, {"config", config}, {"seed", seed}};
}

std::size_t thread_budget(std::size_t requested) {
    std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DFM_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1) throw UsageError("DFM_THREADS must be an integer >= 1");
        n = std::min(n, static_cast<std::size_t>(cap));
    }
    return n;
}

std::vector<std::pair<std::string, double>> parse_rates(const std::vector<std::string>& items) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& s : items) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--lr expects kind=value, got '" + s + "'");
        const auto kind = s.substr(0, eq);
        dfm::parse_baseline_kind(kind);
        try {
            out.emplace_back(kind, std::stod(s.substr(eq + 1)));
        } catch (const std::exception&) {
            throw UsageError("bad learning rate in '" + s + "'");
        }
    }
    return out;
}

void write_report(const dfm::ExperimentReport& report, const json& prov, const std::string& csv_path,
                  const std::string& json_path) {
    if (!csv_path.empty()) {
        std::string text = "# tool_version: " + std::string(dfm::kToolVersion) + "\r\n";
        text += "# command: " + prov.at("command").get<std::string>() + "\r\n";
        text += "# config: " + prov.at("config").dump() + "\r\n";
        text += "# seed: " + prov.at("seed").dump() + "\r\n";
        dfm::write_file_atomic(csv_path, text + report.to_csv());
    }
    if (!json_path.empty()) {
        auto j = prov;
        j["report"] = report.to_json();
        dfm::write_json_file(json_path, j);
    }
}

struct SweepFlags {
    std::size_t epochs = 50;
    std::size_t batch = 10;
    double lr = 0.1;
    std::vector<std::string> rates;
    std::size_t n = 200;
    double sigma = dfm::kDefaultBumpSigma;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    bool timing = false;
    std::string csv, json_out;
    dfm::BaselineHyper hyper;
    double threshold = 0.25;
};

void add_sweep_flags(CLI::App* app, SweepFlags& f) {
    app->add_option("--epochs", f.epochs, "training epochs")->capture_default_str();
    app->add_option("--batch-size", f.batch, "batch size")->capture_default_str();
    app->add_option("--learning-rate", f.lr, "default learning rate")->capture_default_str();
    app->add_option("--lr", f.rates, "per-kind learning rate, kind=value (repeatable)");
    app->add_option("--n", f.n, "dataset size")->capture_default_str();
    app->add_option("--sigma", f.sigma, "bump width")->capture_default_str();
    app->add_option("--seed", f.seed, "base seed for data, init and shuffling")->capture_default_str();
    app->add_option("--threads", f.threads, "worker threads (0 = all cores, capped by DFM_THREADS)");
    app->add_flag("--record-timing", f.timing, "record wall-clock milliseconds (not reproducible)");
    app->add_option("--poly-degree", f.hyper.poly_degree, "poly-onn degree per variable")->capture_default_str();
    app->add_option("--poly-activation", f.hyper.poly_activation, "poly-onn activation")->capture_default_str();
    app->add_option("--poly-init-scale", f.hyper.poly_init_scale, "poly-onn init scale")->capture_default_str();
    app->add_option("--wave-radius", f.hyper.wave_radius, "wave frequency shell radius")->capture_default_str();
    app->add_option("--filter-length", f.hyper.filter_length, "conv filter length")->capture_default_str();
    app->add_option("--layers", f.hyper.layers, "layers per model")->capture_default_str();
    app->add_option("--out-csv", f.csv, "CSV report path");
    app->add_option("--out-json", f.json_out, "JSON report path");
}

dfm::SweepSettings settings_from(const SweepFlags& f) {
    if (f.csv.empty() && f.json_out.empty()) throw UsageError("give --out-csv and/or --out-json");
    dfm::SweepSettings s;
    s.train.epochs = f.epochs;
    s.train.batch_size = f.batch;
    s.train.learning_rate = f.lr;
    s.train.seed = f.seed;
    s.train.validate();
    s.hyper = f.hyper;
    s.hyper.init_seed = f.seed;
    s.dataset_size = f.n;
    s.sigma = f.sigma;
    s.data_seed = f.seed;
    s.learning_rates = parse_rates(f.rates);
    s.threshold_fraction = f.threshold;
    s.record_timing = f.timing;
    s.threads = thread_budget(f.threads);
    return s;
}

int run(int argc, char** argv) {
    CLI::App app{"Function-space neural network toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", dfm::kToolVersion);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the Gaussian-bump dataset");
    std::size_t g_n = 200, g_res = 100;
    double g_sigma = dfm::kDefaultBumpSigma;
    std::uint64_t g_seed = 0;
    std::string g_out, g_bin;
    gen->add_option("--n", g_n, "number of pairs")->capture_default_str();
    gen->add_option("--resolution", g_res, "samples per function")->capture_default_str();
    gen->add_option("--sigma", g_sigma, "bump width")->capture_default_str();
    gen->add_option("--seed", g_seed, "generator seed")->capture_default_str();
    gen->add_option("--out", g_out, "output JSON path")->required();
    gen->add_option("--binary", g_bin, "also write a flat binary sidecar");

    // train
    auto* train = app.add_subcommand("train", "train a model from a run config");
    std::string t_config;
    std::size_t t_threads = 0;
    train->add_option("--config", t_config, "run config JSON")->required();
    train->add_option("--threads", t_threads, "unused for single runs; accepted for symmetry");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
    std::string e_model, e_data, e_out;
    eval->add_option("--model", e_model, "checkpoint path")->required();
    eval->add_option("--data", e_data, "dataset JSON path")->required();
    eval->add_option("--out", e_out, "output JSON path");

    // discretize
    auto* disc = app.add_subcommand("discretize", "instantiate a kernel as a weight matrix");
    std::string d_kernel, d_mode = "integrate", d_out;
    std::size_t d_n = 0, d_m = 0;
    disc->add_option("--kernel", d_kernel, "kernel JSON path")->required();
    disc->add_option("--mode", d_mode, "integrate or sample")->capture_default_str();
    disc->add_option("--n", d_n, "input samples")->required();
    disc->add_option("--m", d_m, "output samples (default n)");
    disc->add_option("--out", d_out, "output JSON path")->required();

    // sweeps
    auto* sres = app.add_subcommand("sweep-resolution", "convergence across resolutions");
    SweepFlags rf;
    std::vector<std::string> r_kinds{"wave", "poly-onn", "fc"};
    std::vector<std::size_t> r_res{16, 32, 64, 100};
    std::size_t r_repeats = 5;
    sres->add_option("--kinds", r_kinds, "model kinds")->delimiter(',')->capture_default_str();
    sres->add_option("--resolutions", r_res, "ascending resolutions")->delimiter(',')->capture_default_str();
    sres->add_option("--repeats", r_repeats, "seeds per setting")->capture_default_str();
    sres->add_option("--waves", rf.hyper.waves, "waves per wave layer")->capture_default_str();
    sres->add_option("--threshold", rf.threshold, "convergence threshold as a fraction of the initial loss")
        ->capture_default_str();
    add_sweep_flags(sres, rf);

    auto* spar = app.add_subcommand("sweep-params", "test error versus waves per layer");
    SweepFlags pf;
    std::vector<std::size_t> p_waves{1, 2, 4, 8};
    std::size_t p_res = 100, p_repeats = 5;
    spar->add_option("--waves", p_waves, "ascending waves per layer")->delimiter(',')->capture_default_str();
    spar->add_option("--resolution", p_res, "signal length")->capture_default_str();
    spar->add_option("--repeats", p_repeats, "seeds per setting")->capture_default_str();
    add_sweep_flags(spar, pf);

    // ingest-idx
    auto* ingest = app.add_subcommand("ingest-idx", "read IDX images and rescale them");
    std::string i_in, i_method = "nearest", i_out;
    std::size_t i_side = 28, i_limit = 0;
    ingest->add_option("--in", i_in, "IDX image file")->required();
    ingest->add_option("--side", i_side, "output side length")->capture_default_str();
    ingest->add_option("--method", i_method, "nearest or bilinear")->capture_default_str();
    ingest->add_option("--limit", i_limit, "maximum images (0 = all)");
    ingest->add_option("--out", i_out, "output JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (*gen) {
        const json cfg = {{"n", g_n}, {"resolution", g_res}, {"sigma", g_sigma}, {"seed", g_seed}};
        const auto ds = dfm::gen_bump_dataset(g_n, g_res, g_sigma, g_seed);
        auto j = provenance("gen-data", cfg, g_seed);
        j["dataset"] = dfm::dataset_to_json(ds);
        dfm::write_json_file(g_out, j);
        if (!g_bin.empty()) dfm::write_file_atomic(g_bin, dfm::dataset_to_binary(ds));
        std::cerr << "wrote " << ds.pairs.size() << " pairs to " << g_out << "\n";
        return 0;
    }

    if (*train) {
        const auto cfg = dfm::parse_run_config(dfm::read_json_file(t_config));
        const auto ds = dfm::load_dataset(cfg.dataset);
        if (!cfg.dataset.path && ds.meta.resolution != cfg.dataset.resolution)
            throw dfm::ShapeError("dataset resolution mismatch");
        const std::size_t res = ds.pairs.front().gamma.size();
        auto model = dfm::build_baseline(cfg.kind, res, cfg.hyper);
        const json resolved = dfm::run_config_to_json(cfg);
        dfm::TrainResult result;
        try {
            result = dfm::train_loop(model, ds, cfg.train);
        } catch (const dfm::TrainingDiverged& e) {
            const std::string dump = cfg.checkpoint + ".diverged.json";
            auto j = provenance("train", resolved, cfg.train.seed);
            j["model"] = e.model_state;
            j["error"] = e.what();
            dfm::write_json_file(dump, j);
            std::cerr << "error: " << e.what() << "; model state dumped to " << dump << "\n";
            return 2;
        }
        auto ckpt = provenance("train", resolved, cfg.train.seed);
        ckpt["split_seed"] = cfg.train.seed;
        ckpt["model"] = dfm::model_to_json(model);
        ckpt["result"] = {{"initial_train_loss", result.initial_train_loss},
                          {"final_train_loss", result.final_train_loss},
                          {"final_test_loss", fmt17(result.final_test_loss)},
                          {"iterations", result.iterations}};
        dfm::write_json_file(cfg.checkpoint, ckpt);
        if (cfg.log) {
            auto log = provenance("train", resolved, cfg.train.seed);
            log["loss_history"] = result.loss_history;
            log["result"] = ckpt["result"];
            dfm::write_json_file(*cfg.log, log);
        }
        std::cerr << "initial train loss " << fmt17(result.initial_train_loss) << "\n"
                  << "final train loss " << fmt17(result.final_train_loss) << "\n"
                  << "final test loss " << fmt17(result.final_test_loss) << "\n";
        return 0;
    }

    if (*eval) {
        const auto ckpt = dfm::read_json_file(e_model);
        const auto model = dfm::model_from_json(ckpt.at("model"));
        const auto dj = dfm::read_json_file(e_data);
        const auto ds = dfm::dataset_from_json(dj.contains("dataset") ? dj.at("dataset") : dj);
        const auto split_seed = ckpt.at("split_seed").get<std::uint64_t>();
        const auto split = dfm::split_dataset(ds.pairs.size(), split_seed);
        const double test = dfm::mean_loss(model, ds, split.test);
        const double train_loss = dfm::mean_loss(model, ds, split.train);
        std::cout << "test loss " << fmt17(test) << "\n";
        if (!e_out.empty()) {
            const json cfg = {{"model", e_model}, {"data", e_data}};
            auto j = provenance("eval", cfg, split_seed);
            j["test_loss"] = fmt17(test);
            j["train_loss"] = fmt17(train_loss);
            dfm::write_json_file(e_out, j);
        }
        return 0;
    }

    if (*disc) {
        const auto kj = dfm::read_json_file(d_kernel);
        const auto kernel = dfm::kernel_from_json(kj.contains("kernel") ? kj.at("kernel") : kj);
        if (d_m == 0) d_m = d_n;
        dfm::DiscretizationMode mode;
        if (d_mode == "integrate") {
            mode = dfm::DiscretizationMode::Integrate;
        } else if (d_mode == "sample") {
            mode = dfm::DiscretizationMode::Sample;
        } else {
            throw UsageError("--mode must be integrate or sample");
        }
        const auto nd = dfm::instantiate(kernel, dfm::DiscretizationSpec::with_outputs(d_n, d_m, mode));
        json rows = json::array();
        for (Eigen::Index i = 0; i < nd.weights.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(nd.weights.cols()));
            for (Eigen::Index j = 0; j < nd.weights.cols(); ++j) row[static_cast<std::size_t>(j)] = nd.weights(i, j);
            rows.push_back(row);
        }
        const json cfg = {{"kernel", dfm::kernel_to_json(kernel)}, {"mode", d_mode}, {"n", d_n}, {"m", d_m}};
        auto j = provenance("discretize", cfg, nullptr);
        j["weights"] = std::move(rows);
        dfm::write_json_file(d_out, j);
        return 0;
    }

    if (*sres) {
        auto s = settings_from(rf);
        s.hyper.waves = rf.hyper.waves;
        std::vector<dfm::BaselineKind> kinds;
        for (const auto& k : r_kinds) kinds.push_back(dfm::parse_baseline_kind(k));
        const auto report = dfm::resolution_sweep(kinds, r_res, r_repeats, s);
        write_report(report, provenance("sweep-resolution", report.config, rf.seed), rf.csv, rf.json_out);
        return 0;
    }

    if (*spar) {
        const auto s = settings_from(pf);
        const auto report = dfm::param_sweep(p_waves, p_res, p_repeats, s);
        write_report(report, provenance("sweep-params", report.config, pf.seed), pf.csv, pf.json_out);
        return 0;
    }

    if (*ingest) {
        const auto method = dfm::parse_rescale_method(i_method);
        const auto t = dfm::read_idx(i_in);
        if (t.dims.size() != 3) throw dfm::ShapeError("ingest-idx expects a 3-D image tensor");
        const std::size_t count = i_limit ? std::min(i_limit, t.dims[0]) : t.dims[0];
        json images = json::array();
        for (std::size_t k = 0; k < count; ++k) {
            const auto img = dfm::rescale_image(t.image(k), i_side, method);
            std::vector<double> flat;
            flat.reserve(static_cast<std::size_t>(img.size()));
            for (Eigen::Index r = 0; r < img.rows(); ++r)
                for (Eigen::Index c = 0; c < img.cols(); ++c) flat.push_back(img(r, c));
            images.push_back(std::move(flat));
        }
        const json cfg = {{"in", i_in}, {"side", i_side}, {"method", i_method}, {"limit", i_limit}};
        auto j = provenance("ingest-idx", cfg, nullptr);
        j["source_dims"] = t.dims;
        j["side"] = i_side;
        j["images"] = std::move(images);
        dfm::write_json_file(i_out, j);
        std::cerr << "wrote " << count << " images to " << i_out << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const dfm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const dfm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
