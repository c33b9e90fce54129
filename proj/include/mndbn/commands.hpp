#pragma once

// Experiment commands behind the `mndbn` executable. Each command reads a
// JSON config, writes its artifacts into an output directory together with
// manifest.json (the fully resolved config, seed and SHA-256 of every
// artifact). Passing a manifest back as --config replays the run.
//
// Exit codes: 0 success, 1 finished with warnings, 2 configuration error,
// 3 data error, 4 numeric failure.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mndbn/data.hpp"
#include "mndbn/dbn.hpp"
#include "mndbn/error.hpp"
#include "mndbn/mixed_norm.hpp"
#include "mndbn/report.hpp"
#include "mndbn/serialize.hpp"

namespace mndbn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { ok = 0, warning = 1, config_failure = 2, data_failure = 3, numeric_failure = 4 };

struct Options {
    std::optional<fs::path> config;
    std::optional<fs::path> out;
    std::optional<fs::path> model;
    std::optional<fs::path> run_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::ostream* log = &std::cerr;
};

struct Outcome {
    int code = ok;
    fs::path out_dir;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Helpers

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return os.str();
}

inline std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw parse_error(p.string() + ": cannot open");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Field access with dotted-path error messages.
class ConfigReader {
public:
    ConfigReader(const json& j, std::string prefix = {}) : j_(j), prefix_(std::move(prefix)) {}

    [[nodiscard]] bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    [[nodiscard]] ConfigReader child(const std::string& key) const {
        const json& c = at(key);
        if (!c.is_object()) fail(key, "must be an object");
        return {c, path(key)};
    }

    [[nodiscard]] const json& at(const std::string& key) const {
        if (!j_.is_object() || !j_.contains(key)) fail(key, "is required");
        return j_.at(key);
    }

    template <typename T>
    [[nodiscard]] T get(const std::string& key) const {
        const json& v = at(key);
        try {
            if constexpr (std::is_unsigned_v<T>) {
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(key, "must be a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) fail(key, "must be a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) fail(key, "must be a string");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) fail(key, "must be true or false");
            }
            return v.get<T>();
        } catch (const json::exception&) {
            fail(key, "has the wrong type");
        }
    }

    template <typename T>
    [[nodiscard]] T get_or(const std::string& key, T fallback) const {
        return has(key) ? get<T>(key) : fallback;
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw config_error("config field '" + path(key) + "' " + what);
    }

private:
    [[nodiscard]] std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
    const json& j_;
    std::string prefix_;
};

struct LoadedConfig {
    json config;     ///< the user's config (inner "config" of a manifest)
    json manifest;   ///< non-null when replaying from a manifest
    fs::path base;   ///< directory relative paths resolve against
};

inline LoadedConfig load_config(const Options& opt) {
    if (!opt.config) throw config_error("--config is required");
    if (!fs::is_regular_file(*opt.config)) throw config_error(opt.config->string() + ": config file not found");
    json j;
    try {
        j = json::parse(read_bytes(*opt.config));
    } catch (const json::parse_error& e) {
        throw config_error(opt.config->string() + ": invalid JSON: " + e.what());
    }
    LoadedConfig lc;
    lc.base = fs::absolute(*opt.config).parent_path();
    if (j.is_object() && j.contains("command") && j.contains("config")) {
        lc.manifest = j;
        lc.config = j.at("config");
    } else {
        lc.config = std::move(j);
    }
    if (!lc.config.is_object()) throw config_error("config must be a JSON object");
    return lc;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return fs::absolute(path.is_absolute() ? path : base / path).lexically_normal();
}

// ---------------------------------------------------------------------------
// Config sections

struct DatasetConfig {
    std::string name;
    std::string format;  ///< "usps-text" or "idx"
    json paths;          ///< absolute paths
    std::optional<std::size_t> train_limit;
    std::optional<std::size_t> test_limit;
};

inline DatasetConfig parse_dataset(const ConfigReader& root, const fs::path& base) {
    const ConfigReader d = root.child("dataset");
    DatasetConfig c;
    c.name = d.get<std::string>("name");
    c.format = d.get<std::string>("format");
    const ConfigReader p = d.child("paths");
    c.paths = json::object();
    std::vector<std::string> keys;
    if (c.format == "usps-text")
        keys = {"train", "test"};
    else if (c.format == "idx")
        keys = {"train_images", "train_labels", "test_images", "test_labels"};
    else
        d.fail("format", "must be \"usps-text\" or \"idx\"");
    for (const auto& k : keys) {
        const bool required = k.starts_with("train");
        if (required || p.has(k)) c.paths[k] = resolve(base, p.get<std::string>(k)).string();
    }
    if (d.has("train_limit")) c.train_limit = d.get<std::size_t>("train_limit");
    if (d.has("test_limit")) c.test_limit = d.get<std::size_t>("test_limit");
    return c;
}

inline json to_json(const DatasetConfig& c) {
    json j{{"name", c.name}, {"format", c.format}, {"paths", c.paths}};
    if (c.train_limit) j["train_limit"] = *c.train_limit;
    if (c.test_limit) j["test_limit"] = *c.test_limit;
    return j;
}

struct LoadedData {
    Dataset train;
    std::optional<Dataset> test;
};

inline LoadedData load_data(const DatasetConfig& c) {
    LoadedData out;
    auto limit = [](Dataset d, const std::optional<std::size_t>& n) { return n ? d.head(*n) : d; };
    if (c.format == "usps-text") {
        out.train = load_usps(fs::path(c.paths.at("train").get<std::string>()), Split::train);
        if (c.paths.contains("test")) out.test = load_usps(fs::path(c.paths.at("test").get<std::string>()), Split::test);
    } else {
        out.train = load_idx(c.paths.at("train_images").get<std::string>(), c.paths.at("train_labels").get<std::string>(),
                             c.name, Split::train);
        if (c.paths.contains("test_images") && c.paths.contains("test_labels"))
            out.test = load_idx(c.paths.at("test_images").get<std::string>(),
                                c.paths.at("test_labels").get<std::string>(), c.name, Split::test);
    }
    out.train.name = c.name;
    out.train = limit(std::move(out.train), c.train_limit);
    if (out.test) {
        out.test->name = c.name;
        out.test = limit(std::move(*out.test), c.test_limit);
    }
    try {
        out.train.validate();
        if (out.test) out.test->validate();
    } catch (const contract_error& e) {
        throw parse_error(c.name + ": " + e.what());
    }
    if (out.train.size() == 0) throw parse_error(c.name + ": training split is empty");
    return out;
}

inline PenaltySpec parse_penalty(const ConfigReader& p) {
    PenaltySpec s;
    s.lambda = p.get<double>("lambda");
    s.group_size = p.get<std::size_t>("group_size");
    const double pct = p.get<double>("overlap_pct");
    if (!(pct >= 0.0 && pct < 100.0)) p.fail("overlap_pct", "must be in [0, 100)");
    s.overlap_fraction = pct / 100.0;
    s.epsilon = p.get_or<double>("epsilon", default_norm_floor);
    if (!(s.lambda >= 0.0)) p.fail("lambda", "must be >= 0");
    if (!(s.epsilon > 0.0 && s.epsilon <= 1e-6)) p.fail("epsilon", "must be in (0, 1e-6]");
    return s;
}

inline json penalty_config_json(const PenaltySpec& s) {
    return {{"lambda", s.lambda},
            {"group_size", s.group_size},
            {"overlap_pct", s.overlap_fraction * 100.0},
            {"epsilon", s.epsilon}};
}

inline TrainParams parse_train(const ConfigReader& t) {
    TrainParams p;
    p.lr = t.get<double>("lr");
    p.momentum = t.get<double>("momentum");
    p.batch_size = t.get<std::size_t>("batch");
    p.epochs = t.get<std::size_t>("epochs");
    p.cd_k = t.get<std::size_t>("cd_k");
    p.final_momentum = t.get_or<double>("final_momentum", 0.9);
    p.momentum_switch_epoch = t.get_or<std::size_t>("momentum_switch_epoch", 5);
    p.weight_init_std = t.get_or<double>("weight_init_std", 0.01);
    try {
        p.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("config field ") + e.what());
    }
    return p;
}

inline json train_config_json(const TrainParams& p, std::uint64_t seed) {
    return {{"lr", p.lr},
            {"momentum", p.momentum},
            {"final_momentum", p.final_momentum},
            {"momentum_switch_epoch", p.momentum_switch_epoch},
            {"batch", p.batch_size},
            {"epochs", p.epochs},
            {"cd_k", p.cd_k},
            {"weight_init_std", p.weight_init_std},
            {"seed", seed}};
}

inline std::uint64_t parse_seed(const ConfigReader& section, const Options& opt) {
    if (opt.seed) return *opt.seed;
    return section.get<std::uint64_t>("seed");
}

inline fs::path output_dir(const ConfigReader& root, const Options& opt, const fs::path& base) {
    const fs::path dir = opt.out ? fs::absolute(*opt.out) : resolve(base, root.get<std::string>("out_dir"));
    fs::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------------------
// CSV writers

// Logs carry no clock readings so that replays are byte-identical; wall
// times go to timing.json instead.
inline std::string training_log_csv(std::span<const EpochLog> log) {
    std::string out = "epoch,recon_error,mean_hidden_activation,mixed_norm_value\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + "," + format_number(e.recon_error) + "," +
               format_number(e.mean_hidden_activation) + "," + format_number(e.mixed_norm_value) + "\n";
    return out;
}

inline std::string finetune_log_csv(std::span<const FineTuneEpoch> log) {
    std::string out = "epoch,head_only,train_loss,train_accuracy,test_accuracy\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + "," + (e.head_only ? "1" : "0") + "," + format_number(e.train_loss) + "," +
               format_number(e.train_accuracy) + "," +
               (std::isnan(e.test_accuracy) ? std::string() : format_number(e.test_accuracy)) + "\n";
    return out;
}

template <typename Epoch>
json epoch_seconds(std::span<const Epoch> log) {
    json a = json::array();
    for (const auto& e : log) a.push_back(e.wall_seconds);
    return a;
}

inline std::string confusion_csv(const Matrix& c) {
    std::string out = "true_class";
    for (std::size_t k = 0; k < c.cols(); ++k) out += ",pred_" + std::to_string(k);
    out += "\n";
    for (std::size_t r = 0; r < c.rows(); ++r) {
        out += std::to_string(r);
        for (std::size_t k = 0; k < c.cols(); ++k) out += "," + std::to_string(static_cast<long long>(c(r, k)));
        out += "\n";
    }
    return out;
}

/// Writes artifacts and the manifest; hashes are taken from the bytes written.
class ArtifactWriter {
public:
    explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, const std::string& bytes) {
        write_text_file(dir_ / name, bytes);
        hashes_[name] = sha256_hex(bytes);
    }

    void finish(const std::string& command, const json& config, std::uint64_t seed, const json& inputs = json::object()) {
        json m{{"command", command}, {"config", config}, {"seed", seed}, {"artifacts", hashes_}, {"inputs", inputs}};
        write_text_file(dir_ / "manifest.json", m.dump(2) + "\n");
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    json hashes_ = json::object();
};

inline void note(const Options& opt, const std::string& msg) {
    if (opt.log) *opt.log << msg << '\n';
}

// ---------------------------------------------------------------------------
// Commands

/// train-rbm: one (mixed-norm) RBM on the training split.
inline Outcome cmd_train_rbm(const Options& opt) {
    const LoadedConfig lc = load_config(opt);
    const ConfigReader root(lc.config);
    const DatasetConfig dc = parse_dataset(root, lc.base);
    const auto layer_size = root.get<std::size_t>("layer_size");
    if (layer_size == 0) root.fail("layer_size", "must be >= 1");
    const PenaltySpec spec = parse_penalty(root.child("penalty"));
    const ConfigReader tr = root.child("train");
    const TrainParams params = parse_train(tr);
    const std::uint64_t seed = parse_seed(tr, opt);
    const PenaltyConfig penalty = make_penalty(spec, layer_size);
    const fs::path out_dir = output_dir(root, opt, lc.base);

    const LoadedData data = load_data(dc);
    note(opt, "train-rbm: " + std::to_string(data.train.size()) + " images, " + std::to_string(layer_size) +
                  " hidden units, lambda " + format_number(spec.lambda));
    Rng rng(seed);
    TrainResult r = train_mnrbm(data.train.images, layer_size, penalty, params, rng, [&](const EpochLog& e) {
        note(opt, "  epoch " + std::to_string(e.epoch) + " recon " + format_fixed(e.recon_error, 6) + " mean_h " +
                      format_fixed(e.mean_hidden_activation, 4));
    });

    Dbn d;
    d.layers.push_back(std::move(r.model));
    d.layer_penalties.push_back(spec);
    const json meta{{"command", "train-rbm"},
                    {"dataset", dc.name},
                    {"train", train_config_json(params, seed)},
                    {"penalties", json::array({penalty_config_json(spec)})}};

    json resolved{{"dataset", to_json(dc)},
                  {"layer_size", layer_size},
                  {"penalty", penalty_config_json(spec)},
                  {"train", train_config_json(params, seed)},
                  {"out_dir", out_dir.string()}};
    ArtifactWriter w(out_dir);
    w.write("model.mndbn", encode_model(d, meta));
    w.write("train_log.csv", training_log_csv(r.log));
    w.write("timing.json", json{{"epoch_seconds", epoch_seconds<EpochLog>(r.log)}}.dump(2) + "\n");
    w.finish("train-rbm", resolved, seed);
    return {ok, out_dir, {}};
}

/// pretrain-dbn: greedy stack with one penalty block per layer.
inline Outcome cmd_pretrain_dbn(const Options& opt) {
    const LoadedConfig lc = load_config(opt);
    const ConfigReader root(lc.config);
    const DatasetConfig dc = parse_dataset(root, lc.base);
    const json& sizes_j = root.at("layer_sizes");
    if (!sizes_j.is_array() || sizes_j.empty()) root.fail("layer_sizes", "must be a non-empty array");
    std::vector<std::size_t> sizes;
    for (const auto& s : sizes_j) {
        if (!s.is_number_integer() || s.get<std::int64_t>() <= 0)
            root.fail("layer_sizes", "must contain positive integers");
        sizes.push_back(s.get<std::size_t>());
    }
    const json& pen_j = root.at("penalties");
    if (!pen_j.is_array()) root.fail("penalties", "must be an array");
    if (pen_j.size() != sizes.size())
        root.fail("penalties", "has " + std::to_string(pen_j.size()) + " entries but layer_sizes has " +
                                   std::to_string(sizes.size()));
    std::vector<PenaltySpec> specs;
    json pen_resolved = json::array();
    for (std::size_t l = 0; l < pen_j.size(); ++l) {
        specs.push_back(parse_penalty(ConfigReader(pen_j[l], "penalties[" + std::to_string(l) + "]")));
        make_penalty(specs.back(), sizes[l]);  // surface group errors before loading data
        pen_resolved.push_back(penalty_config_json(specs.back()));
    }
    const ConfigReader tr = root.child("train");
    const TrainParams params = parse_train(tr);
    const std::uint64_t seed = parse_seed(tr, opt);
    const fs::path out_dir = output_dir(root, opt, lc.base);

    const LoadedData data = load_data(dc);
    note(opt, "pretrain-dbn: " + std::to_string(data.train.size()) + " images, " + std::to_string(sizes.size()) +
                  " layers");
    Rng rng(seed);
    PretrainResult r = pretrain_greedy(data.train.images, sizes, specs, params, rng,
                                       [&](std::size_t layer, const EpochLog& e) {
                                           note(opt, "  layer " + std::to_string(layer + 1) + " epoch " +
                                                         std::to_string(e.epoch) + " recon " +
                                                         format_fixed(e.recon_error, 6));
                                       });

    const json meta{{"command", "pretrain-dbn"},
                    {"dataset", dc.name},
                    {"train", train_config_json(params, seed)},
                    {"penalties", pen_resolved}};
    json resolved{{"dataset", to_json(dc)},
                  {"layer_sizes", sizes},
                  {"penalties", pen_resolved},
                  {"train", train_config_json(params, seed)},
                  {"out_dir", out_dir.string()}};
    ArtifactWriter w(out_dir);
    w.write("model.mndbn", encode_model(r.dbn, meta));
    for (std::size_t l = 0; l < r.logs.size(); ++l)
        w.write("train_log_layer" + std::to_string(l + 1) + ".csv", training_log_csv(r.logs[l]));
    json layer_seconds = json::array();
    for (const auto& log : r.logs) layer_seconds.push_back(epoch_seconds<EpochLog>(log));
    w.write("timing.json", json{{"layer_epoch_seconds", layer_seconds}}.dump(2) + "\n");
    w.finish("pretrain-dbn", resolved, seed);
    return {ok, out_dir, {}};
}

inline fs::path model_path(const Options& opt, const LoadedConfig& lc) {
    if (opt.model) return fs::absolute(*opt.model);
    if (!lc.manifest.is_null() && lc.manifest.contains("inputs") && lc.manifest["inputs"].contains("model"))
        return lc.manifest["inputs"]["model"].at("path").get<std::string>();
    if (lc.config.contains("model")) return resolve(lc.base, ConfigReader(lc.config).get<std::string>("model"));
    throw config_error("--model is required");
}

inline json model_input(const fs::path& p) {
    return {{"model", {{"path", p.string()}, {"sha256", sha256_hex(read_bytes(p))}}}};
}

/// finetune: attach a 10-way softmax head and train the whole stack.
inline Outcome cmd_finetune(const Options& opt) {
    const LoadedConfig lc = load_config(opt);
    const fs::path mpath = model_path(opt, lc);
    const ConfigReader root(lc.config);
    const DatasetConfig dc = parse_dataset(root, lc.base);
    const ConfigReader ft = root.child("finetune");
    FineTuneParams params;
    params.epochs = ft.get<std::size_t>("epochs");
    params.head_only_epochs = ft.get<std::size_t>("head_only_epochs");
    params.batch_size = ft.get<std::size_t>("batch");
    params.cg_iterations = ft.get_or<std::size_t>("cg_iterations", 3);
    const auto optimizer = ft.get_or<std::string>("optimizer", "cg");
    if (optimizer != "cg" && optimizer != "gd") ft.fail("optimizer", "must be \"cg\" or \"gd\"");
    params.use_cg = optimizer == "cg";
    params.gd_learning_rate = ft.get_or<double>("gd_learning_rate", 0.1);
    try {
        params.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("config field ") + e.what());
    }
    const std::uint64_t seed = parse_seed(ft, opt);
    const std::string arch = root.get_or<std::string>("architecture", "");
    const fs::path out_dir = output_dir(root, opt, lc.base);

    const json inputs = model_input(mpath);
    ModelFile mf = load_model(mpath);
    const LoadedData data = load_data(dc);
    if (data.train.images.cols() != mf.dbn.num_inputs())
        throw config_error("dataset images have " + std::to_string(data.train.images.cols()) +
                           " pixels but the model expects " + std::to_string(mf.dbn.num_inputs()));
    note(opt, "finetune: " + std::to_string(data.train.size()) + " training images, " +
                  std::to_string(params.head_only_epochs) + " head-only + " + std::to_string(params.epochs) +
                  " full epochs");

    const auto start = std::chrono::steady_clock::now();
    Rng rng(seed);
    const auto log = fine_tune(mf.dbn, data.train, params, rng, data.test ? &*data.test : nullptr,
                               [&](const FineTuneEpoch& e) {
                                   note(opt, "  epoch " + std::to_string(e.epoch) + " train " +
                                                 format_fixed(e.train_accuracy, 4) +
                                                 (std::isnan(e.test_accuracy)
                                                      ? std::string()
                                                      : " test " + format_fixed(e.test_accuracy, 4)));
                               });
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const json ft_resolved{{"epochs", params.epochs},
                           {"head_only_epochs", params.head_only_epochs},
                           {"batch", params.batch_size},
                           {"cg_iterations", params.cg_iterations},
                           {"optimizer", optimizer},
                           {"gd_learning_rate", params.gd_learning_rate},
                           {"seed", seed}};
    json meta = mf.meta;
    meta["finetune"] = ft_resolved;

    const std::string tag = arch.empty() ? architecture_tag(mf.dbn.layer_penalties) : arch;
    const Evaluation train_eval = evaluate(mf.dbn, data.train);
    json metrics{{"architecture", tag},
                 {"dataset", dc.name},
                 {"train_accuracy", train_eval.accuracy},
                 {"wall_seconds", wall}};
    if (data.test) metrics["test_accuracy"] = evaluate(mf.dbn, *data.test).accuracy;

    json resolved{{"dataset", to_json(dc)}, {"finetune", ft_resolved}, {"out_dir", out_dir.string()}};
    if (!arch.empty()) resolved["architecture"] = arch;
    ArtifactWriter w(out_dir);
    w.write("model.mndbn", encode_model(mf.dbn, meta));
    w.write("finetune_log.csv", finetune_log_csv(log));
    w.write("timing.json", json{{"epoch_seconds", epoch_seconds<FineTuneEpoch>(log)}, {"total_seconds", wall}}.dump(2) + "\n");
    w.write("metrics.json", metrics.dump(2) + "\n");
    w.finish("finetune", resolved, seed, inputs);
    return {ok, out_dir, {}};
}

/// evaluate: accuracy and confusion matrix of a model with a head.
inline Outcome cmd_evaluate(const Options& opt) {
    const LoadedConfig lc = load_config(opt);
    const fs::path mpath = model_path(opt, lc);
    const ConfigReader root(lc.config);
    const DatasetConfig dc = parse_dataset(root, lc.base);
    const auto split = root.get_or<std::string>("split", "test");
    if (split != "train" && split != "test") root.fail("split", "must be \"train\" or \"test\"");
    const fs::path out_dir = output_dir(root, opt, lc.base);

    const json inputs = model_input(mpath);
    const ModelFile mf = load_model(mpath);
    if (!mf.dbn.head) throw config_error(mpath.string() + ": model has no softmax head; run finetune first");
    const LoadedData data = load_data(dc);
    if (split == "test" && !data.test) throw config_error("config field 'dataset.paths' has no test split");
    const Dataset& ds = split == "test" ? *data.test : data.train;
    if (ds.images.cols() != mf.dbn.num_inputs()) throw config_error("dataset does not match model input size");

    const Evaluation e = evaluate(mf.dbn, ds);
    note(opt, "evaluate: accuracy " + format_fixed(e.accuracy * 100.0, 2) + "% on " + std::to_string(ds.size()) +
                  " " + split + " images");
    json metrics{{"architecture", architecture_tag(mf.dbn.layer_penalties)},
                 {"dataset", dc.name},
                 {"split", split},
                 {"samples", ds.size()},
                 {"accuracy", e.accuracy}};
    json resolved{{"dataset", to_json(dc)}, {"split", split}, {"out_dir", out_dir.string()}};
    ArtifactWriter w(out_dir);
    w.write("evaluation.json", metrics.dump(2) + "\n");
    w.write("confusion.csv", confusion_csv(e.confusion));
    w.finish("evaluate", resolved, 0, inputs);
    return {ok, out_dir, {}};
}

/// report: figures and tables for every model and metrics file under a run
/// directory. Missing pieces are listed as warnings; everything else is
/// still produced.
inline Outcome cmd_report(const Options& opt) {
    // The run directory comes from the positional argument or, when
    // replaying, from a config/manifest holding run_dir (and out_dir).
    fs::path run, out_dir;
    if (opt.run_dir) {
        run = fs::absolute(*opt.run_dir).lexically_normal();
    } else if (opt.config) {
        const LoadedConfig lc = load_config(opt);
        const ConfigReader root(lc.config);
        run = resolve(lc.base, root.get<std::string>("run_dir"));
        if (root.has("out_dir")) out_dir = resolve(lc.base, root.get<std::string>("out_dir"));
    } else {
        throw config_error("report needs a run directory");
    }
    if (!fs::is_directory(run)) throw config_error(run.string() + ": not a directory");
    if (opt.out) out_dir = fs::absolute(*opt.out);
    if (out_dir.empty()) out_dir = run / "report";
    fs::create_directories(out_dir);
    constexpr std::size_t histogram_bins = 20;
    constexpr std::size_t report_batch = 1000;

    std::vector<fs::path> models, metrics;
    for (const auto& e : fs::recursive_directory_iterator(run)) {
        if (!e.is_regular_file()) continue;
        if (e.path().extension() == ".mndbn") models.push_back(e.path());
        if (e.path().filename() == "metrics.json") metrics.push_back(e.path());
    }
    std::sort(models.begin(), models.end());
    std::sort(metrics.begin(), metrics.end());

    Outcome result{ok, out_dir, {}};
    auto tag_of = [&](const fs::path& p) {
        std::string s = fs::relative(p, run).replace_extension().generic_string();
        std::replace(s.begin(), s.end(), '/', '_');
        return s;
    };

    ArtifactWriter w(out_dir);
    json sources = json::object();
    for (const auto& mp : models) {
        const std::string tag = tag_of(mp);
        ModelFile mf;
        try {
            mf = load_model(mp);
        } catch (const parse_error& e) {
            result.warnings.push_back(std::string("unreadable model: ") + e.what());
            continue;
        }
        sources[tag] = sha256_hex(read_bytes(mp));
        const Rbm& first = mf.dbn.layers.front();
        const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(std::min<std::size_t>(first.num_hidden(), 100)))));
        try {
            w.write("tiles_" + tag + ".pgm", encode_pgm(weight_tiles(first, grid, grid)));
        } catch (const config_error& e) {
            result.warnings.push_back(tag + ": " + e.what());
        }

        const fs::path manifest_path = mp.parent_path() / "manifest.json";
        if (!fs::exists(manifest_path)) {
            result.warnings.push_back(tag + ": missing " + manifest_path.string() + " (no dataset for histograms)");
            continue;
        }
        try {
            const json m = json::parse(read_bytes(manifest_path));
            DatasetConfig dc = parse_dataset(ConfigReader(m.at("config"), "config"), manifest_path.parent_path());
            dc.train_limit = std::min(dc.train_limit.value_or(report_batch), report_batch);
            const LoadedData data = load_data(dc);
            w.write("histogram_" + tag + ".csv",
                    histogram_csv(activation_histogram(first, data.train.images, histogram_bins)));
            w.write("density_" + tag + ".csv", activation_density_csv(first, data.train.images, histogram_bins));
        } catch (const std::exception& e) {
            result.warnings.push_back(tag + ": histogram skipped: " + e.what());
        }
    }

    std::vector<RunRecord> records;
    for (const auto& mp : metrics) {
        try {
            const json m = json::parse(read_bytes(mp));
            const ConfigReader r(m, fs::relative(mp, run).generic_string());
            const double acc = r.has("test_accuracy") ? r.get<double>("test_accuracy") : r.get<double>("train_accuracy");
            records.push_back({r.get<std::string>("architecture"), r.get<std::string>("dataset"), acc,
                               r.get<double>("wall_seconds")});
        } catch (const std::exception& e) {
            result.warnings.push_back(std::string("unreadable metrics: ") + e.what());
        }
    }
    const ResultsTable t = results_table(records);
    w.write("results.csv", t.csv);
    w.write("results.txt", t.text);
    w.finish("report", json{{"run_dir", run.string()}, {"out_dir", out_dir.string()}}, 0, json{{"models", sources}});

    if (models.empty()) result.warnings.push_back("no models found under " + run.string());
    if (records.empty()) result.warnings.push_back("no metrics.json found under " + run.string());
    for (const auto& msg : result.warnings) note(opt, "warning: " + msg);
    if (!result.warnings.empty()) result.code = warning;
    return result;
}

/// Runs a command and maps failures onto exit codes.
inline int run(const std::string& command, const Options& opt) {
    set_num_threads(opt.threads);
    try {
        Outcome o;
        if (command == "train-rbm")
            o = cmd_train_rbm(opt);
        else if (command == "pretrain-dbn")
            o = cmd_pretrain_dbn(opt);
        else if (command == "finetune")
            o = cmd_finetune(opt);
        else if (command == "evaluate")
            o = cmd_evaluate(opt);
        else if (command == "report")
            o = cmd_report(opt);
        else
            throw config_error("unknown command '" + command + "'");
        return o.code;
    } catch (const config_error& e) {
        note(opt, std::string("config error: ") + e.what());
        return config_failure;
    } catch (const parse_error& e) {
        note(opt, std::string("data error: ") + e.what());
        return data_failure;
    } catch (const numeric_error& e) {
        note(opt, std::string("numeric failure: ") + e.what());
        return numeric_failure;
    } catch (const std::logic_error& e) {
        note(opt, std::string("config error: ") + e.what());
        return config_failure;
    } catch (const refusal_error& e) {
        note(opt, std::string("config error: ") + e.what());
        return config_failure;
    } catch (const fs::filesystem_error& e) {
        note(opt, std::string("data error: ") + e.what());
        return data_failure;
    }
}

}  // namespace mndbn::cli
