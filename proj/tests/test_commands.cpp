#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mndbn/commands.hpp"
#include "test_support.hpp"

using namespace mndbn;
using namespace mndbn::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;
    json dataset;
};

Workspace make_workspace(const std::string& name, std::size_t n_train = 120, std::size_t n_test = 60) {
    Workspace w{temp_dir(name), {}};
    Dataset train = synthetic_digits(n_train, 1);
    Dataset test = synthetic_digits(n_test, 2);
    write_idx(train, w.dir / "train-images", w.dir / "train-labels");
    write_idx(test, w.dir / "test-images", w.dir / "test-labels");
    w.dataset = {{"name", "SYNTH"},
                 {"format", "idx"},
                 {"paths",
                  {{"train_images", "train-images"},
                   {"train_labels", "train-labels"},
                   {"test_images", "test-images"},
                   {"test_labels", "test-labels"}}}};
    return w;
}

json train_section(std::size_t epochs = 2) {
    return {{"lr", 0.1}, {"momentum", 0.5}, {"batch", 20}, {"epochs", epochs}, {"cd_k", 1}, {"seed", 7}};
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& cfg) {
    const fs::path p = dir / name;
    std::ofstream(p) << cfg.dump(2);
    return p;
}

struct CmdResult {
    int code;
    std::string log;
};

CmdResult run_cmd(const std::string& command, cli::Options opt) {
    std::ostringstream log;
    opt.log = &log;
    const int code = cli::run(command, opt);
    return {code, log.str()};
}

cli::Options with_config(const fs::path& cfg) {
    cli::Options o;
    o.config = cfg;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json pretrain_config(const Workspace& w, const std::string& out) {
    return {{"dataset", w.dataset},
            {"layer_sizes", {20, 10}},
            {"penalties",
             {{{"lambda", 0.1}, {"group_size", 5}, {"overlap_pct", 0}},
              {{"lambda", 0.0}, {"group_size", 5}, {"overlap_pct", 0}}}},
            {"train", train_section()},
            {"out_dir", out}};
}

json finetune_config(const Workspace& w, const std::string& out, const std::string& model) {
    return {{"dataset", w.dataset},
            {"model", model},
            {"finetune", {{"epochs", 2}, {"head_only_epochs", 1}, {"batch", 40}, {"seed", 3}}},
            {"out_dir", out}};
}

}  // namespace

TEST(Cli, TrainRbmWritesArtifactsAndManifest) {
    const Workspace w = make_workspace("cli_train");
    const json cfg{{"dataset", w.dataset},
                   {"layer_size", 16},
                   {"penalty", {{"lambda", 0.1}, {"group_size", 4}, {"overlap_pct", 0}}},
                   {"train", train_section()},
                   {"out_dir", "run"}};
    const CmdResult r = run_cmd("train-rbm", with_config(write_config(w.dir, "c.json", cfg)));
    ASSERT_EQ(r.code, 0) << r.log;
    const fs::path run = w.dir / "run";
    for (const char* f : {"model.mndbn", "train_log.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(run / f)) << f;
    const json m = json::parse(slurp(run / "manifest.json"));
    EXPECT_EQ(m["command"], "train-rbm");
    EXPECT_EQ(m["seed"], 7);
    EXPECT_EQ(m["artifacts"]["model.mndbn"], cli::sha256_hex(slurp(run / "model.mndbn")));
    const ModelFile mf = load_model(run / "model.mndbn");
    EXPECT_EQ(mf.dbn.layers[0].num_hidden(), 16u);
    EXPECT_EQ(mf.dbn.layer_penalties[0].group_size, 4u);
    const std::string log = slurp(run / "train_log.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
}

TEST(Cli, ConfigErrorsNameTheField) {
    const Workspace w = make_workspace("cli_cfgerr", 20, 10);
    json cfg{{"dataset", w.dataset},
             {"layer_size", 16},
             {"penalty", {{"lambda", 0.1}, {"group_size", 4}, {"overlap_pct", 0}}},
             {"train", train_section()},
             {"out_dir", "run"}};
    json no_lr = cfg;
    no_lr["train"].erase("lr");
    CmdResult r = run_cmd("train-rbm", with_config(write_config(w.dir, "a.json", no_lr)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.log.find("train.lr"), std::string::npos) << r.log;

    json bad_groups = cfg;
    bad_groups["layer_size"] = 500;
    bad_groups["penalty"] = {{"lambda", 0.1}, {"group_size", 50}, {"overlap_pct", 20}};
    r = run_cmd("train-rbm", with_config(write_config(w.dir, "b.json", bad_groups)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.log.find("50"), std::string::npos) << r.log;

    json bad_format = cfg;
    bad_format["dataset"]["format"] = "csv";
    r = run_cmd("train-rbm", with_config(write_config(w.dir, "c.json", bad_format)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.log.find("dataset.format"), std::string::npos) << r.log;

    cli::Options none;
    EXPECT_EQ(run_cmd("train-rbm", none).code, 2);
    EXPECT_EQ(run_cmd("bogus", with_config(w.dir / "a.json")).code, 2);
}

TEST(Cli, DataErrorsExitWithThree) {
    const Workspace w = make_workspace("cli_dataerr", 20, 10);
    std::ofstream(w.dir / "train-labels", std::ios::binary) << "junk";
    const json cfg{{"dataset", w.dataset},
                   {"layer_size", 8},
                   {"penalty", {{"lambda", 0.0}, {"group_size", 0}, {"overlap_pct", 0}}},
                   {"train", train_section(1)},
                   {"out_dir", "run"}};
    const CmdResult r = run_cmd("train-rbm", with_config(write_config(w.dir, "c.json", cfg)));
    EXPECT_EQ(r.code, 3) << r.log;
    std::ofstream(w.dir / "broken.json") << "{ not json";
    EXPECT_EQ(run_cmd("train-rbm", with_config(w.dir / "broken.json")).code, 2);
}

TEST(Cli, PretrainRejectsPenaltyCountMismatch) {
    const Workspace w = make_workspace("cli_mismatch", 20, 10);
    json cfg = pretrain_config(w, "run");
    cfg["penalties"].erase(1);
    const CmdResult r = run_cmd("pretrain-dbn", with_config(write_config(w.dir, "c.json", cfg)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.log.find("penalties"), std::string::npos) << r.log;
}

TEST(Cli, FullPipelineAndReplay) {
    const Workspace w = make_workspace("cli_pipeline");
    ASSERT_EQ(run_cmd("pretrain-dbn", with_config(write_config(w.dir, "pre.json", pretrain_config(w, "pre")))).code, 0);
    EXPECT_TRUE(fs::exists(w.dir / "pre" / "train_log_layer1.csv"));
    EXPECT_TRUE(fs::exists(w.dir / "pre" / "train_log_layer2.csv"));

    const fs::path ft_cfg = write_config(w.dir, "ft.json", finetune_config(w, "ft", "pre/model.mndbn"));
    const CmdResult ft = run_cmd("finetune", with_config(ft_cfg));
    ASSERT_EQ(ft.code, 0) << ft.log;
    const json metrics = json::parse(slurp(w.dir / "ft" / "metrics.json"));
    EXPECT_EQ(metrics["architecture"], "MN DBN (5)");
    EXPECT_EQ(metrics["dataset"], "SYNTH");
    EXPECT_TRUE(metrics.contains("test_accuracy"));

    json ev{{"dataset", w.dataset}, {"model", "ft/model.mndbn"}, {"out_dir", "ev"}};
    const CmdResult e = run_cmd("evaluate", with_config(write_config(w.dir, "ev.json", ev)));
    ASSERT_EQ(e.code, 0) << e.log;
    const json evaluation = json::parse(slurp(w.dir / "ev" / "evaluation.json"));
    EXPECT_EQ(evaluation["accuracy"], metrics["test_accuracy"]);
    EXPECT_EQ(evaluation["samples"], 60);

    // Evaluating a head-less model is a config error.
    ev["model"] = "pre/model.mndbn";
    EXPECT_EQ(run_cmd("evaluate", with_config(write_config(w.dir, "ev2.json", ev))).code, 2);

    // Replaying both manifests reproduces the models byte for byte.
    cli::Options replay_pre = with_config(w.dir / "pre" / "manifest.json");
    replay_pre.out = w.dir / "pre_replay";
    ASSERT_EQ(run_cmd("pretrain-dbn", replay_pre).code, 0);
    EXPECT_EQ(slurp(w.dir / "pre" / "model.mndbn"), slurp(w.dir / "pre_replay" / "model.mndbn"));
    EXPECT_EQ(slurp(w.dir / "pre" / "train_log_layer1.csv"), slurp(w.dir / "pre_replay" / "train_log_layer1.csv"));

    cli::Options replay_ft = with_config(w.dir / "ft" / "manifest.json");
    replay_ft.out = w.dir / "ft_replay";
    ASSERT_EQ(run_cmd("finetune", replay_ft).code, 0);
    EXPECT_EQ(slurp(w.dir / "ft" / "model.mndbn"), slurp(w.dir / "ft_replay" / "model.mndbn"));
    EXPECT_EQ(slurp(w.dir / "ft" / "finetune_log.csv"), slurp(w.dir / "ft_replay" / "finetune_log.csv"));

    // A different seed changes the model.
    cli::Options other = with_config(ft_cfg);
    other.out = w.dir / "ft_seed";
    other.seed = 4;
    ASSERT_EQ(run_cmd("finetune", other).code, 0);
    EXPECT_NE(slurp(w.dir / "ft" / "model.mndbn"), slurp(w.dir / "ft_seed" / "model.mndbn"));

    // Report: tiles, histograms and the results table; rerunning is stable.
    cli::Options rep;
    rep.run_dir = w.dir;
    rep.out = w.dir / "report_out";
    const CmdResult r1 = run_cmd("report", rep);
    EXPECT_EQ(r1.code, 0) << r1.log;
    EXPECT_TRUE(fs::exists(w.dir / "report_out" / "tiles_pre_model.pgm"));
    EXPECT_TRUE(fs::exists(w.dir / "report_out" / "histogram_pre_model.csv"));
    EXPECT_TRUE(fs::exists(w.dir / "report_out" / "density_pre_model.csv"));
    const std::string results = slurp(w.dir / "report_out" / "results.csv");
    EXPECT_NE(results.find("\"MN DBN (5)\",SYNTH"), std::string::npos) << results;
    const std::string first_manifest = slurp(w.dir / "report_out" / "manifest.json");
    ASSERT_EQ(run_cmd("report", rep).code, 0);
    EXPECT_EQ(slurp(w.dir / "report_out" / "manifest.json"), first_manifest);
}

TEST(Cli, ReportOnEmptyDirectoryWarns) {
    const fs::path dir = temp_dir("cli_empty_report");
    cli::Options rep;
    rep.run_dir = dir;
    const CmdResult r = run_cmd("report", rep);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.log.find("no models"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "report" / "results.csv"));
    rep.run_dir = dir / "missing";
    EXPECT_EQ(run_cmd("report", rep).code, 2);
}

TEST(Cli, BinaryReportsUsageErrors) {
    const std::string bin = MNDBN_CLI_PATH;
    EXPECT_EQ(WEXITSTATUS(std::system((bin + " --help > /dev/null").c_str())), 0);
    EXPECT_EQ(WEXITSTATUS(std::system((bin + " train-rbm --no-such-flag 2> /dev/null").c_str())), 2);
    EXPECT_EQ(WEXITSTATUS(std::system((bin + " train-rbm --config /nonexistent.json 2> /dev/null").c_str())), 2);
}
