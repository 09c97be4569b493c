#include <cstdint>
#include <iostream>

#include <CLI11.hpp>

#include "fedzs/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fedzs - federated learning simulator with zero-shot discovery of new classes"};
    app.require_subcommand(1);

    fedzs::cli::RunManifest manifest;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "execute a scenario and write metrics");
    run->add_option("--scenario", manifest.scenario_path, "scenario file")->required();
    run->add_option("--out", manifest.out_dir, "output directory")->required();
    auto* seed_opt = run->add_option("--seed", seed, "master seed override");
    run->add_flag("--oracle-k", manifest.oracle_k,
                  "use the scheduled ground truth for the cluster count");
    run->add_flag("--silent", manifest.silent,
                  "suppress new-class reporting (plain federated updates)");

    std::filesystem::path validate_path;
    auto* validate = app.add_subcommand("validate", "check a scenario file");
    validate->add_option("--scenario", validate_path, "scenario file")->required();

    fedzs::cli::ImpressArgs impress_args;
    auto* impress =
        app.add_subcommand("impress", "synthesize impressions for one class of a model dump");
    impress->add_option("--model", impress_args.model_path, "model dump file")->required();
    impress->add_option("--class", impress_args.class_id, "target class label id")
        ->required();
    impress->add_option("--n", impress_args.count, "impressions to synthesize");
    impress->add_option("--beta", impress_args.beta, "concentration scaling");
    impress->add_option("--out", impress_args.out_path, "output feature file");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        if (seed_opt->count() > 0) manifest.seed_override = seed;
        return fedzs::cli::cmd_run(manifest, std::cerr);
    }
    if (validate->parsed()) return fedzs::cli::cmd_validate(validate_path, std::cout);
    return fedzs::cli::cmd_impress(impress_args, std::cerr);
}
