#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mndbn/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mixed-norm RBM / DBN training toolkit"};
    app.require_subcommand(1);

    mndbn::cli::Options opt;
    std::string config, out, model, run_dir;
    std::uint64_t seed = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--out", out, "Output directory (overrides out_dir)");
        sub->add_option("--seed", seed, "Seed (overrides the config)");
        sub->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto* train = app.add_subcommand("train-rbm", "Train one (mixed-norm) RBM");
    train->add_option("--config", config, "JSON config or manifest")->required();
    common(train);

    auto* pretrain = app.add_subcommand("pretrain-dbn", "Greedy layer-wise DBN pre-training");
    pretrain->add_option("--config", config, "JSON config or manifest")->required();
    common(pretrain);

    auto* finetune = app.add_subcommand("finetune", "Attach a softmax head and fine-tune");
    finetune->add_option("--config", config, "JSON config or manifest")->required();
    finetune->add_option("--model", model, "Pre-trained MNDBN1 model");
    common(finetune);

    auto* evaluate = app.add_subcommand("evaluate", "Accuracy and confusion matrix");
    evaluate->add_option("--config", config, "JSON config or manifest")->required();
    evaluate->add_option("--model", model, "MNDBN1 model with a head");
    common(evaluate);

    auto* report = app.add_subcommand("report", "Figures and tables for a run directory");
    auto* run_dir_opt = report->add_option("run_dir", run_dir, "Run directory");
    report->add_option("--config", config, "Report manifest to replay (supplies run_dir)")->excludes(run_dir_opt);
    common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mndbn::cli::config_failure;
    }

    if (!config.empty()) opt.config = config;
    if (!out.empty()) opt.out = out;
    if (!model.empty()) opt.model = model;
    if (!run_dir.empty()) opt.run_dir = run_dir;
    for (auto* sub : {train, pretrain, finetune, evaluate, report})
        if (sub->count("--seed") > 0) opt.seed = seed;

    return mndbn::cli::run(app.get_subcommands().front()->get_name(), opt);
}
