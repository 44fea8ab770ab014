#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dab/bitkernel.hpp"
#include "dab/diagnostics.hpp"
#include "dab/model_io.hpp"
#include "dab/nn.hpp"
#include "dab/reference.hpp"
#include "dab/rng.hpp"

#ifndef DABNET_VERSION
#define DABNET_VERSION "0.0.0"
#endif

using namespace dab;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
        case ErrorKind::Input:
        case ErrorKind::Shape:
        case ErrorKind::Size:
        case ErrorKind::DegenerateInput:
            return 2;
        case ErrorKind::Format:
        case ErrorKind::Io:
            return 4;
        default:
            return 3; // numeric / internal-state failures
    }
}

std::uint32_t seed_from_env_or(std::uint32_t flag_seed) {
    const char* env = std::getenv("DAB_SEED");
    if (!env || !*env) return flag_seed;
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (!end || *end != '\0' || v > 0xFFFFFFFFul)
        fail(ErrorKind::Usage, "DAB_SEED must be an unsigned 32-bit integer");
    return std::uint32_t(v);
}

BinMode parse_mode(const std::string& s) {
    if (s == "fprec") return BinMode::FPrec;
    if (s == "wbin") return BinMode::WBin;
    if (s == "fbin") return BinMode::FBin;
    fail(ErrorKind::Usage, "unknown mode " + s);
}

Scheme parse_scheme(const std::string& s) {
    if (s == "dab") return Scheme::Dab;
    if (s == "xnor") return Scheme::Xnor;
    if (s == "bnn") return Scheme::Bnn;
    fail(ErrorKind::Usage, "unknown scheme " + s);
}

const char* mode_name(BinMode m) {
    switch (m) {
        case BinMode::FPrec: return "fprec";
        case BinMode::WBin: return "wbin";
        default: return "fbin";
    }
}

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::Dab: return "dab";
        case Scheme::Xnor: return "xnor";
        default: return "bnn";
    }
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::SignActivation: return "sign";
        case LayerKind::Relu: return "relu";
        default: return "softmax_xent";
    }
}

std::uint32_t mix(std::uint32_t seed, std::uint32_t salt) {
    std::uint32_t h = seed ^ (salt * 0x9E3779B9u);
    h ^= h >> 16;
    h *= 0x85EBCA6Bu;
    h ^= h >> 13;
    return h;
}

struct DataPair {
    Dataset train, test;
    std::string source;
};

// --data is either "synthetic" or
// "idx:train-images,train-labels,test-images,test-labels"
DataPair load_data(const std::string& spec, std::uint32_t seed,
                   std::size_t per_class_train, std::size_t per_class_test) {
    DataPair d;
    d.source = spec;
    if (spec == "synthetic") {
        d.train = generate_sketches(sketch_class_names(), per_class_train, 32,
                                    mix(seed, 1));
        d.test = generate_sketches(sketch_class_names(), per_class_test, 32,
                                   mix(seed, 2));
        d.test.split = Split::Test;
        return d;
    }
    if (spec.rfind("idx:", 0) == 0) {
        std::vector<std::string> paths;
        std::stringstream ss(spec.substr(4));
        std::string part;
        while (std::getline(ss, part, ',')) paths.push_back(part);
        if (paths.size() != 4)
            fail(ErrorKind::Usage,
                 "--data idx: wants train-images,train-labels,test-images,"
                 "test-labels");
        d.train = load_idx(paths[0], paths[1]);
        d.test = load_idx(paths[2], paths[3]);
        d.test.split = Split::Test;
        return d;
    }
    fail(ErrorKind::Usage, "--data must be 'synthetic' or 'idx:<paths>'");
}

std::uint32_t dataset_fingerprint(const Dataset& ds) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(ds.images.numel() * 4 + ds.labels.size());
    const auto* img = reinterpret_cast<const std::uint8_t*>(ds.images.ptr());
    bytes.insert(bytes.end(), img, img + ds.images.numel() * 4);
    for (int l : ds.labels) bytes.push_back(std::uint8_t(l));
    return crc32_ieee({bytes.data(), bytes.size()});
}

// Content fingerprint of a saved model. The file ends with its own CRC32,
// so hashing the whole thing would land on the fixed CRC residue for every
// valid model; hash the payload in front of the checksum instead.
std::uint32_t file_crc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    std::size_t payload = bytes.size() >= 4 ? bytes.size() - 4 : bytes.size();
    return crc32_ieee({bytes.data(), payload});
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

json manifest_json(const NetworkConfig& config, const Hyperparams& hyper,
                   const std::string& arch, BinMode mode, Scheme scheme,
                   bool scheme_used, const DataPair& data) {
    json layers = json::array();
    for (const LayerSpec& l : config.layers) {
        json j{{"kind", kind_name(l.kind)},
               {"units", l.units},
               {"kernel", l.kernel},
               {"stride", l.stride},
               {"pad", l.pad},
               {"bias", l.bias},
               {"mode", mode_name(l.bin_mode)}};
        if (is_binarized_layer(l)) j["scheme"] = scheme_name(l.scheme);
        layers.push_back(j);
    }
    json j{
        {"code_version", DABNET_VERSION},
        {"model_format_version", kModelFormatVersion},
        {"arch", arch},
        {"mode", mode_name(mode)},
        {"seed", hyper.seed},
        {"grad_mode",
         hyper.grad_mode == GradMode::Paper ? "paper" : "projection"},
        {"threads", hyper.threads},
        {"hyperparams",
         {{"lr_max", hyper.lr_max},
          {"lr_min", hyper.lr_min},
          {"lr_decay_factor", hyper.lr_decay_factor},
          {"plateau_patience", hyper.plateau_patience},
          {"batch", hyper.batch},
          {"epochs", hyper.epochs},
          {"adam_beta1", hyper.adam_beta1},
          {"adam_beta2", hyper.adam_beta2},
          {"adam_eps", hyper.adam_eps},
          {"augment_hflip", hyper.augment_hflip}}},
        {"data",
         {{"source", data.source},
          {"train_size", data.train.size()},
          {"test_size", data.test.size()},
          {"class_count", data.train.class_count},
          {"train_fingerprint", "crc32:" + hex32(dataset_fingerprint(data.train))},
          {"test_fingerprint", "crc32:" + hex32(dataset_fingerprint(data.test))}}},
        {"input_shape", config.input_shape},
        {"class_count", config.class_count},
        {"layers", layers},
    };
    if (scheme_used) j["scheme"] = scheme_name(scheme);
    return j;
}

int cmd_train(const std::string& arch, const std::string& mode_s,
              const std::string& scheme_s, bool scheme_given,
              const std::string& data_spec, int epochs, std::size_t batch,
              std::uint32_t seed, const std::string& out_dir,
              const std::string& grad_mode_s, int threads,
              std::size_t per_class_train, std::size_t per_class_test) {
    BinMode mode = parse_mode(mode_s);
    if (mode == BinMode::FPrec && scheme_given)
        fail(ErrorKind::Usage, "--scheme has no meaning with --mode fprec");
    Scheme scheme = parse_scheme(scheme_s);
    if (epochs < 1) fail(ErrorKind::Usage, "--epochs must be positive");
    if (batch < 1) fail(ErrorKind::Usage, "--batch must be positive");
    if (threads < 1) fail(ErrorKind::Usage, "--threads must be positive");

    DataPair data =
        load_data(data_spec, seed, per_class_train, per_class_test);
    std::size_t hw = data.train.images.shape[2];
    if (hw != data.train.images.shape[3])
        fail(ErrorKind::Input, "training images must be square");

    NetworkConfig config;
    if (arch == "convnet")
        config = make_convnet(mode, scheme, data.train.class_count, hw);
    else if (arch == "mlp")
        config = make_mlp(mode, scheme, data.train.class_count, hw);
    else
        fail(ErrorKind::Usage, "unknown arch " + arch);

    Hyperparams hyper;
    hyper.epochs = epochs;
    hyper.batch = batch;
    hyper.seed = seed;
    hyper.threads = threads;
    hyper.grad_mode =
        grad_mode_s == "projection" ? GradMode::Projection : GradMode::Paper;
    if (grad_mode_s != "paper" && grad_mode_s != "projection")
        fail(ErrorKind::Usage, "unknown grad mode " + grad_mode_s);

    fs::create_directories(out_dir);

    TrainState state = init_state(config, seed);
    TrajectoryLog log(state, seed);

    auto t0 = std::chrono::steady_clock::now();
    std::vector<EpochMetrics> metrics = train_network(
        config, state, data.train, data.test, hyper, log.hook());
    auto t1 = std::chrono::steady_clock::now();
    double secs = std::chrono::duration<double>(t1 - t0).count();
    for (const EpochMetrics& m : metrics)
        std::fprintf(stderr, "epoch %d: loss %.4f acc %.4f lr %g\n", m.epoch,
                     m.train_loss, m.test_acc, double(m.lr));
    std::fprintf(stderr, "trained %d epochs in %.1fs\n", epochs, secs);

    std::string model_path = (fs::path(out_dir) / "model.dabn").string();
    save_model(config, state, model_path);

    {
        std::ofstream csv(fs::path(out_dir) / "metrics.csv");
        if (!csv) fail(ErrorKind::Io, "cannot write metrics.csv");
        csv << "epoch,train_loss,test_acc,lr\n";
        char line[128];
        for (const EpochMetrics& m : metrics) {
            std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.9g\n", m.epoch,
                          m.train_loss, m.test_acc, double(m.lr));
            csv << line;
        }
    }
    {
        std::ofstream traj(fs::path(out_dir) / "trajectories.csv");
        if (!traj) fail(ErrorKind::Io, "cannot write trajectories.csv");
        log.write_csv(traj);
    }
    {
        std::ofstream mf(fs::path(out_dir) / "manifest.json");
        if (!mf) fail(ErrorKind::Io, "cannot write manifest.json");
        mf << manifest_json(config, hyper, arch, mode, scheme, scheme_given,
                            data)
                  .dump(2)
           << "\n";
    }

    std::printf("final_test_acc=%.17g\n", metrics.back().test_acc);
    std::printf("model=%s\n", model_path.c_str());
    std::printf("model_crc32=%s\n", hex32(file_crc(model_path)).c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_spec,
             std::uint32_t seed, int threads, std::size_t per_class_train,
             std::size_t per_class_test) {
    LoadedModel m = load_model(model_path);
    DataPair data =
        load_data(data_spec, seed, per_class_train, per_class_test);
    double acc = evaluate(m.config, m.state, data.test, threads);
    std::printf("accuracy=%.17g\n", acc);
    return 0;
}

int cmd_inspect(const std::string& model_path, const std::string& run_dir,
                const std::string& out_path) {
    std::ostringstream body;
    if (!run_dir.empty()) {
        // re-emit the trajectories captured during that run
        fs::path p = fs::path(run_dir) / "trajectories.csv";
        std::ifstream in(p);
        if (!in) fail(ErrorKind::Io, "cannot open " + p.string());
        std::string header;
        std::getline(in, header);
        if (header != "epoch,layer,filter,n,K,K_norm,alpha,beta")
            fail(ErrorKind::Format,
                 "unrecognized trajectory schema in " + p.string());
        body << header << "\n" << in.rdbuf();
    } else {
        LoadedModel m = load_model(model_path);
        body << "layer,filter,n,K,K_norm,alpha,beta\n";
        char line[160];
        for (std::size_t li = 0; li < m.state.layers.size(); ++li) {
            const LayerState& L = m.state.layers[li];
            for (std::size_t fi = 0; fi < L.filters.size(); ++fi) {
                const BinarizedFilter& f = L.filters[fi];
                std::snprintf(line, sizeof line,
                              "%zu,%zu,%zu,%zu,%.9g,%.9g,%.9g\n", li, fi, f.n,
                              f.k, double(f.k) / double(f.n), double(f.alpha),
                              double(f.beta));
                body << line;
            }
        }
    }

    if (out_path.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream out(out_path);
        if (!out) fail(ErrorKind::Io, "cannot write " + out_path);
        out << body.str();
    }
    return 0;
}

template <typename F>
double median_seconds(F&& fn, int reps) {
    fn(); // warm up
    std::vector<double> times;
    times.reserve(std::size_t(reps));
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

int bench_ksearch(std::vector<std::size_t> sizes) {
    if (sizes.empty())
        for (int p = 14; p <= 20; ++p) sizes.push_back(std::size_t(1) << p);

    std::mt19937 gen(1234);
    std::vector<double> log_n, log_t;
    std::vector<std::pair<std::size_t, double>> rows;
    for (std::size_t n : sizes) {
        std::vector<float> w(n);
        for (float& v : w) v = normal_float(gen, 0.0f, 1.0f);
        volatile std::size_t sink = 0;
        double t = median_seconds(
            [&] {
                KSearchResult r = find_optimal_k(w);
                sink = sink + r.k;
            },
            9);
        rows.emplace_back(n, t);
        log_n.push_back(std::log(double(n)));
        log_t.push_back(std::log(t));
        std::printf("n=%zu median_s=%.6g\n", n, t);
    }

    if (rows.size() >= 2) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < log_n.size(); ++i) {
            mx += log_n[i];
            my += log_t[i];
        }
        mx /= double(log_n.size());
        my /= double(log_n.size());
        double num = 0, den = 0;
        for (std::size_t i = 0; i < log_n.size(); ++i) {
            num += (log_n[i] - mx) * (log_t[i] - my);
            den += (log_n[i] - mx) * (log_n[i] - mx);
        }
        std::printf("growth_exponent=%.3f\n", num / den);
    }

    auto find_time = [&](std::size_t n) -> double {
        for (auto& [sz, t] : rows)
            if (sz == n) return t;
        return 0.0;
    };
    double t16 = find_time(std::size_t(1) << 16);
    double t20 = find_time(std::size_t(1) << 20);
    if (t16 > 0 && t20 > 0) std::printf("ratio_2p20_2p16=%.2f\n", t20 / t16);
    return 0;
}

int bench_gemm(std::vector<std::size_t> sizes) {
    std::size_t m = 64, k = 4096, n = 256;
    if (sizes.size() == 3) {
        m = sizes[0];
        k = sizes[1];
        n = sizes[2];
    } else if (!sizes.empty()) {
        fail(ErrorKind::Usage, "--sizes for gemm wants m,k,n");
    }

    std::mt19937 gen(99);
    RealTensor a({m, k});
    for (float& v : a.data) v = uniform_float(gen, 0.0f, 1.0f) < 0.5f ? 1.0f : -1.0f;
    RealTensor w({n, k});
    for (float& v : w.data) v = normal_float(gen, 0.0f, 1.0f);
    auto filters = binarize_layer(w, Scheme::Dab);

    PackedMatrix pm(m, k);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < k; ++c)
            if (a.data[r * k + c] > 0.0f) pm.set(r, c, true);

    RealTensor wt({k, n});
    for (std::size_t f = 0; f < n; ++f) {
        std::vector<float> rec = reconstruct(filters[f]);
        for (std::size_t c = 0; c < k; ++c) wt.data[c * n + f] = rec[c];
    }

    volatile float sink = 0;
    double t_bits = median_seconds(
        [&] {
            RealTensor out = dab_gemm(pm, filters);
            sink = sink + out.data[0];
        },
        9);
    double t_ref = median_seconds(
        [&] {
            RealTensor out = reference_matmul(a, wt);
            sink = sink + out.data[0];
        },
        3);

    std::printf("m=%zu k=%zu n=%zu\n", m, k, n);
    std::printf("bit_kernel_s=%.6g\n", t_bits);
    std::printf("reference_s=%.6g\n", t_ref);
    std::printf("speedup=%.2f\n", t_ref / t_bits);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"binarized sketch-classifier toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string arch = "convnet", mode_s = "fprec", scheme_s = "dab";
    std::string data_spec = "synthetic", out_dir, grad_mode_s = "paper";
    int epochs = 15, threads = 1;
    std::size_t batch = 64, pc_train = 500, pc_test = 125;
    std::uint32_t seed = 1;
    train->add_option("--arch", arch)->check(CLI::IsMember({"mlp", "convnet"}));
    train->add_option("--mode", mode_s)
        ->check(CLI::IsMember({"fprec", "wbin", "fbin"}));
    auto* scheme_opt = train->add_option("--scheme", scheme_s)
                           ->check(CLI::IsMember({"dab", "xnor", "bnn"}));
    train->add_option("--data", data_spec);
    train->add_option("--epochs", epochs);
    train->add_option("--batch", batch);
    train->add_option("--seed", seed);
    train->add_option("--out", out_dir)->required();
    train->add_option("--grad-mode", grad_mode_s)
        ->check(CLI::IsMember({"paper", "projection"}));
    train->add_option("--threads", threads);
    train->add_option("--train-per-class", pc_train,
                      "synthetic training images per class");
    train->add_option("--test-per-class", pc_test,
                      "synthetic test images per class");

    // eval
    auto* eval = app.add_subcommand("eval", "report accuracy of a model");
    std::string model_path;
    eval->add_option("--model", model_path)->required();
    eval->add_option("--data", data_spec);
    eval->add_option("--seed", seed);
    eval->add_option("--threads", threads);
    eval->add_option("--train-per-class", pc_train);
    eval->add_option("--test-per-class", pc_test);

    // inspect
    auto* inspect = app.add_subcommand(
        "inspect", "dump per-filter binarization state as csv");
    std::string run_dir, out_csv;
    auto* im = inspect->add_option("--model", model_path);
    auto* ir = inspect->add_option("--run", run_dir);
    inspect->add_option("--out", out_csv);
    im->excludes(ir);

    // bench
    auto* bench = app.add_subcommand("bench", "time the core kernels");
    std::string kernel = "kseach";
    std::string sizes_s;
    bench->add_option("--kernel", kernel)
        ->check(CLI::IsMember({"kseach", "ksearch", "gemm"}));
    bench->add_option("--sizes", sizes_s, "comma-separated sizes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            return cmd_train(arch, mode_s, scheme_s, scheme_opt->count() > 0,
                             data_spec, epochs, batch, seed_from_env_or(seed),
                             out_dir, grad_mode_s, threads, pc_train, pc_test);
        }
        if (eval->parsed()) {
            return cmd_eval(model_path, data_spec, seed_from_env_or(seed),
                            threads, pc_train, pc_test);
        }
        if (inspect->parsed()) {
            if (model_path.empty() && run_dir.empty())
                fail(ErrorKind::Usage, "inspect wants --model or --run");
            return cmd_inspect(model_path, run_dir, out_csv);
        }
        if (bench->parsed()) {
            std::vector<std::size_t> sizes;
            if (!sizes_s.empty()) {
                std::stringstream ss(sizes_s);
                std::string part;
                while (std::getline(ss, part, ','))
                    sizes.push_back(std::size_t(std::stoull(part)));
            }
            if (kernel == "gemm") return bench_gemm(sizes);
            return bench_ksearch(sizes);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
